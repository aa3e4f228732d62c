//! Build scene products and composite two cut-outs with every stage, then
//! with each stage switched off in turn.
//!
//!     cargo run --release --example insert_object [out_dir]

use std::sync::Arc;

use image::{Rgba, RgbaImage};
use scene_probe::composer::{build_products, render_composite, BuildConfig, Placement, Sprite, Stages};
use scene_probe::raster::save_png;
use scene_probe::synth::{Occluder, SynthConfig, SynthScene, WalkerSpec};

fn cutout(w: u32, h: u32, color: [u8; 3]) -> scene_probe::Result<Sprite> {
    // a rough figure: narrower head on a body
    let img = RgbaImage::from_fn(w, h, |c, r| {
        let head = r < h / 5 && c > w / 4 && c < 3 * w / 4;
        if head || r >= h / 5 {
            Rgba([color[0], color[1], color[2], 255])
        } else {
            Rgba([0, 0, 0, 0])
        }
    });
    Sprite::from_rgba(&img)
}

fn main() -> scene_probe::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("probe-insert"), Into::into);

    let mut cfg = SynthConfig::new(320, 240);
    cfg.occluders.push(Occluder {
        x0: 130,
        x1: 200,
        bottom_y: 25,
        top_y: 70,
        color: [60, 40, 30],
    });
    let mut walkers = WalkerSpec::new(&cfg, 240);
    walkers.duration = (20, 40);
    walkers.concurrent = 2.0;
    cfg.tracks = walkers.generate();
    let scene = SynthScene::new(cfg, 240)?;
    let products = build_products(&scene, &BuildConfig::default())?;
    for f in &products.info.failures {
        println!("{} stage unavailable: {}", f.stage, f.message);
    }

    let placements = vec![
        Placement::new(&products, "red", Arc::new(cutout(20, 60, [210, 50, 40])?), 165.0, 40.0)?,
        Placement::new(&products, "blue", Arc::new(cutout(20, 60, [40, 60, 210])?), 90.0, 10.0)?,
    ];
    let all = render_composite(&products, &placements, Stages::all())?;
    println!("{:?}", all.timings);
    save_png(&out.join("all.png"), &all.i_final)?;

    let off = |f: fn(&mut Stages)| {
        let mut s = Stages::all();
        f(&mut s);
        s
    };
    let variants: [(&str, Stages); 4] = [
        ("no_scale", off(|s| s.scale = false)),
        ("no_lighting", off(|s| s.lighting = false)),
        ("no_occlusion", off(|s| s.occlusion = false)),
        ("no_shadow", off(|s| s.shadow = false)),
    ];
    for (name, stages) in variants {
        let result = render_composite(&products, &placements, stages)?;
        save_png(&out.join(format!("{name}.png")), &result.i_final)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
