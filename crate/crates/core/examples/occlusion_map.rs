//! Learn where scene content hides people, then test a few insertions
//! against the renderer.
//!
//!     cargo run --release --example occlusion_map [out_dir]

use scene_probe::occlusion::{build_occlusion_map, observe_scene, ObserveConfig};
use scene_probe::raster::save_png;
use scene_probe::synth::{Occluder, Owner, Silhouette, SynthConfig, SynthScene, WalkerSpec};

fn main() -> scene_probe::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("probe-occlusion"), Into::into);

    let mut cfg = SynthConfig::new(320, 240);
    cfg.occluders.push(Occluder {
        x0: 120,
        x1: 180,
        bottom_y: 30,
        top_y: 90,
        color: [60, 40, 30],
    });
    let frames = 300;
    let mut walkers = WalkerSpec::new(&cfg, frames);
    walkers.duration = (20, 40);
    cfg.tracks = walkers.generate();
    let scene = SynthScene::new(cfg, frames)?;

    let observations = observe_scene(&scene, &ObserveConfig::default())?;
    let map = build_occlusion_map(320, 240, &observations);
    println!("{} probe observations", observations.len());
    save_png(&out.join("occlusion.png"), &map.visualize())?;

    for (x, y) in [(150.0, 15.0), (150.0, 50.0), (60.0, 30.0)] {
        let inst = scene.instance(Silhouette::Keyhole, 0.4, [230, 40, 40], x, y, 1.0)?;
        let (_, owner, _) = scene.compose(std::slice::from_ref(&inst));
        let (mut shown, mut truly, mut total) = (0, 0, 0);
        for (c, r, _) in inst.layer.frame_pixels(320, 240) {
            shown += usize::from(map.object_wins(c, r, inst.layer.bottom_y));
            truly += usize::from(owner[(r * 320 + c) as usize] == Owner::Sprite(0));
            total += 1;
        }
        println!("person at ({x}, {y}): {shown}/{total} pixels drawn, renderer shows {truly}");
    }
    println!("wrote {}", out.display());
    Ok(())
}
