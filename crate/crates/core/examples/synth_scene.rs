//! Render a synthetic street scene with walkers, a box and a shaded area,
//! and write it to disk with its ground truth.
//!
//!     cargo run --release --example synth_scene [out_dir]

use scene_probe::synth::{export_scene, BrightnessRegion, Occluder, SynthConfig, WalkerSpec};

fn main() -> scene_probe::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("probe-synth"), Into::into);

    let mut cfg = SynthConfig::new(320, 240);
    cfg.seed = 1;
    cfg.occluders.push(Occluder {
        x0: 140,
        x1: 190,
        bottom_y: 30,
        top_y: 80,
        color: [70, 50, 40],
    });
    cfg.brightness.push(BrightnessRegion {
        x0: 0,
        y0: 0,
        x1: 80,
        y1: 240,
        factor: 0.45,
    });
    let mut walkers = WalkerSpec::new(&cfg, 120);
    walkers.duration = (20, 50);
    cfg.tracks = walkers.generate();

    let manifest = export_scene(cfg.clone(), 120, &out)?;
    let truth = cfg.truth();
    println!("{} frames of {}x{} in {}", manifest.frame_count, manifest.width, manifest.height, out.display());
    println!("height plane h = {:.4}x + {:.4}y + {:.2}", truth.plane[0], truth.plane[1], truth.plane[2]);
    println!("shadow shear ({:.2}, {:.2}), gain {:.2}", truth.shear[0], truth.shear[1], truth.shadow_gain);
    println!("{} walkers", truth.tracks.len());
    Ok(())
}
