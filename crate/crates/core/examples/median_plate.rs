//! Median background plate around a frame, compared with the empty scene.
//!
//!     cargo run --release --example median_plate [out_dir]

use scene_probe::background::plate_for_frame;
use scene_probe::dataio::SceneSource;
use scene_probe::raster::save_png;
use scene_probe::synth::{SynthConfig, SynthScene, WalkerSpec};

fn main() -> scene_probe::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("probe-plate"), Into::into);

    let mut cfg = SynthConfig::new(320, 240);
    let mut walkers = WalkerSpec::new(&cfg, 90);
    walkers.duration = (20, 40);
    cfg.tracks = walkers.generate();
    let scene = SynthScene::new(cfg, 90)?;

    let window = scene.manifest().one_second_window();
    let plate = plate_for_frame(&scene, 45, window)?;
    let empty = scene.empty_plate();
    let off = plate
        .pixels
        .pixels()
        .zip(empty.pixels())
        .filter(|(a, b)| a != b)
        .count();
    println!(
        "plate over {window} frames differs from the empty scene on {off} of {} pixels",
        empty.len() / 3
    );

    save_png(&out.join("frame.png"), &scene.frame(45)?.pixels)?;
    save_png(&out.join("plate.png"), &plate.pixels)?;
    println!("wrote {}", out.display());
    Ok(())
}
