//! Fit the cast-shadow model from walkers' shadows and synthesize the
//! gain image for a new object.
//!
//!     cargo run --release --example shadow_fit [out_dir]

use image::{GrayImage, Luma};
use scene_probe::lighting::build_lighting_map;
use scene_probe::occlusion::{build_occlusion_map, observe_scene, ObserveConfig};
use scene_probe::shadow::{collect_shadow_evidence, fit_shadow_model, synthesize_gain_bias, ShadowConfig};
use scene_probe::synth::{Silhouette, SynthConfig, SynthScene, WalkerSpec};

fn main() -> scene_probe::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("probe-shadow"), Into::into);

    let mut cfg = SynthConfig::new(320, 240);
    cfg.light_direction = [-0.6, 0.15, -1.0];
    let mut walkers = WalkerSpec::new(&cfg, 200);
    walkers.duration = (20, 50);
    walkers.concurrent = 2.0;
    cfg.tracks = walkers.generate();
    let scene = SynthScene::new(cfg.clone(), 200)?;

    let observe = ObserveConfig::default();
    let shadow = ShadowConfig::default();
    let evidence = collect_shadow_evidence(&scene, &observe, &shadow)?;
    let model = fit_shadow_model(&evidence, &shadow)?;
    let (kx, ky) = cfg.shear();
    println!("{} shadow observations", evidence.len());
    println!("fit   k = ({:.2}, {:.2}), g = {:.3}", model.k_x, model.k_y, model.gain);
    println!("truth k = ({kx:.2}, {ky:.2}), g = {:.3}", cfg.shadow_gain);

    let observations = observe_scene(&scene, &observe)?;
    let lmap = build_lighting_map(320, 240, &observations);
    let occmap = build_occlusion_map(320, 240, &observations);
    let inst = scene.instance(Silhouette::Keyhole, 0.4, [200, 200, 200], 200.0, 25.0, 1.0)?;
    let gb = synthesize_gain_bias(&model, &inst.layer.frame_mask(320, 240), inst.layer.bottom_y, &lmap, &occmap);
    let gain = GrayImage::from_fn(320, 240, |c, r| Luma([(255.0 * gb.gain[(r * 320 + c) as usize]) as u8]));
    std::fs::create_dir_all(&out).map_err(|e| scene_probe::Error::Format(e.to_string()))?;
    gain.save(out.join("gain.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
