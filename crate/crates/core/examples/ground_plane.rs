//! Fit the pixel-height plane from walkers and rescale a person moved to a
//! new spot.
//!
//!     cargo run --release --example ground_plane

use scene_probe::groundplane::{fit_plane, relative_rescale, HeightSample};
use scene_probe::occlusion::{observe_scene, ObserveConfig};
use scene_probe::synth::{SynthConfig, SynthScene, WalkerSpec};

fn main() -> scene_probe::Result<()> {
    let mut cfg = SynthConfig::new(320, 240);
    // each walker has its own height, so the fit needs many of them
    let mut walkers = WalkerSpec::new(&cfg, 600);
    walkers.duration = (20, 40);
    walkers.concurrent = 2.0;
    cfg.tracks = walkers.generate();
    let scene = SynthScene::new(cfg.clone(), 600)?;

    let samples: Vec<HeightSample> = observe_scene(&scene, &ObserveConfig::default())?
        .iter()
        .map(HeightSample::from_observation)
        .collect();
    let plane = fit_plane(&samples)?;
    let truth = cfg.image_plane();
    println!("fit   h = {:.4}x + {:.4}y + {:.2}", plane.a, plane.b, plane.c);
    println!("truth h = {:.4}x + {:.4}y + {:.2}", truth[0], truth[1], truth[2]);
    println!("{:?}", plane.diagnostics);

    let (from, to) = ((80.0, 10.0), (240.0, 50.0));
    let observed = cfg.plane_height(from.0, from.1).round();
    let scale = relative_rescale(&plane, from, observed, to)?;
    println!(
        "a {observed} px person at {from:?} should be {:.1} px at {to:?} (truth {:.1})",
        observed * scale,
        cfg.plane_height(to.0, to.1)
    );
    Ok(())
}
