//! The `probe` command line.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::background::plate_for_frame;
use crate::composer::{build_scene_dir, render_composite, BuildConfig, Placement, SceneProducts, Sprite, Stages, PRODUCTS_FILE};
use crate::dataio::{Dataset, SceneSource};
use crate::error::{Error, Result, Stage};
use crate::groundplane::{fit_plane, HeightSample};
use crate::lighting::build_lighting_map;
use crate::occlusion::{build_occlusion_map, observe_scene};
use crate::raster::{encode_png, write_file};
use crate::service::{self, ServiceConfig};
use crate::shadow::{collect_shadow_evidence, fit_shadow_model};
use crate::synth::{export_scene, SynthConfig, WalkerSpec};

#[derive(Debug, Parser)]
#[command(name = "probe", version, about = "Scene probing and object compositing for fixed-camera video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Median background plate around one frame.
    Plate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        frame: usize,
        /// Window length in frames (default: one second).
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Occlusion map from all training probes.
    Occmap {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        viz: Option<PathBuf>,
    },
    /// Lighting map from all training probes.
    Lightmap {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        viz: Option<PathBuf>,
    },
    /// Fit the ground height plane and print it.
    Plane {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Fit the shadow model and print it.
    Shadowfit {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Build every product and store it in the scene directory.
    Build {
        #[arg(long)]
        scene: PathBuf,
        /// JSON build configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Insert a sprite and write the composite.
    Insert(InsertArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, env = "PROBE_PORT", default_value_t = service::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PROBE_SESSION_IDLE_SECS", default_value_t = service::DEFAULT_SESSION_IDLE.as_secs())]
        idle_secs: u64,
    },
    /// Synthetic scenes.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
}

#[derive(Debug, Args)]
pub struct InsertArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// RGBA cut-out.
    #[arg(long)]
    pub sprite: PathBuf,
    /// Contact point, bottom-left origin.
    #[arg(long)]
    pub x: f64,
    #[arg(long)]
    pub y: f64,
    #[arg(long)]
    pub height_override: Option<f64>,
    #[arg(long)]
    pub brightness: Option<f32>,
    #[arg(long)]
    pub no_shadow: bool,
    #[arg(long)]
    pub no_occlusion: bool,
    #[arg(long)]
    pub no_lighting: bool,
    #[arg(long)]
    pub no_scale: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl InsertArgs {
    pub fn stages(&self) -> Stages {
        Stages {
            scale: !self.no_scale,
            lighting: !self.no_lighting,
            occlusion: !self.no_occlusion,
            shadow: !self.no_shadow,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Render a synthetic scene with ground truth.
    Export {
        /// JSON `SynthConfig`; random walkers are added when it has no tracks.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 400)]
        width: u32,
        #[arg(long, default_value_t = 300)]
        height: u32,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plate {
            scene,
            frame,
            window,
            out,
        } => {
            let dataset = Dataset::open(&scene)?;
            let window = window.unwrap_or_else(|| dataset.manifest().one_second_window());
            let plate = plate_for_frame(&dataset, frame, window).map_err(|e| e.at_stage(Stage::Background))?;
            write_file(&out, &encode_png(&plate.pixels)?)
        }
        Command::Occmap { scene, out, viz } => {
            let dataset = Dataset::open(&scene)?;
            let (w, h) = dataset.manifest().dimensions();
            let obs = observe_scene(&dataset, &BuildConfig::default().observe).map_err(|e| e.at_stage(Stage::Observe))?;
            let map = build_occlusion_map(w, h, &obs);
            map.save(&out)?;
            if let Some(viz) = viz {
                write_file(&viz, &encode_png(&map.visualize())?)?;
            }
            Ok(())
        }
        Command::Lightmap { scene, out, viz } => {
            let dataset = Dataset::open(&scene)?;
            let (w, h) = dataset.manifest().dimensions();
            let obs = observe_scene(&dataset, &BuildConfig::default().observe).map_err(|e| e.at_stage(Stage::Observe))?;
            let map = build_lighting_map(w, h, &obs);
            if let Some(out) = out {
                map.save(&out)?;
            }
            if let Some(viz) = viz {
                write_file(&viz, &encode_png(&map.visualize())?)?;
            }
            Ok(())
        }
        Command::Plane { scene } => {
            let dataset = Dataset::open(&scene)?;
            let cfg = BuildConfig::default();
            let obs = observe_scene(&dataset, &cfg.observe).map_err(|e| e.at_stage(Stage::Observe))?;
            let samples: Vec<HeightSample> = obs
                .iter()
                .filter(|o| o.confidence >= cfg.plane_confidence && cfg.plane_classes.contains(&o.class_name))
                .map(HeightSample::from_observation)
                .collect();
            let plane = fit_plane(&samples).map_err(|e| e.at_stage(Stage::Plane))?;
            update_products(dataset.root(), |p| {
                p.info.failures.retain(|f| f.stage != Stage::Plane);
                p.info.plane = Some(plane.clone());
            })?;
            print_json(&plane)
        }
        Command::Shadowfit { scene } => {
            let dataset = Dataset::open(&scene)?;
            let cfg = BuildConfig::default();
            let evidence = collect_shadow_evidence(&dataset, &cfg.observe, &cfg.shadow).map_err(|e| e.at_stage(Stage::Shadow))?;
            let model = fit_shadow_model(&evidence, &cfg.shadow).map_err(|e| e.at_stage(Stage::Shadow))?;
            update_products(dataset.root(), |p| {
                p.info.failures.retain(|f| f.stage != Stage::Shadow);
                p.info.shadow = model.clone();
            })?;
            print_json(&model)
        }
        Command::Build { scene, config } => {
            let cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?
                }
                None => BuildConfig::default(),
            };
            let products = build_scene_dir(&scene, &cfg)?;
            for f in &products.info.failures {
                eprintln!("warning: {} stage: {}", f.stage, f.message);
            }
            println!("wrote {}", scene.join(PRODUCTS_FILE).display());
            Ok(())
        }
        Command::Insert(args) => write_file(&args.out, &insert_png(&args)?),
        Command::Serve {
            scenes,
            port,
            host,
            idle_secs,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Format(format!("bad listen address {host}:{port}: {e}")))?;
            let config = ServiceConfig {
                scenes_dir: scenes,
                session_idle: Duration::from_secs(idle_secs),
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io(&config.scenes_dir, e))?;
            eprintln!("listening on http://{addr}");
            runtime.block_on(service::serve(config, addr))
        }
        Command::Synth {
            command:
                SynthCommand::Export {
                    config,
                    width,
                    height,
                    frames,
                    seed,
                    out,
                },
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?
                }
                None => SynthConfig::new(width, height),
            };
            if cfg.tracks.is_empty() {
                let mut spec = WalkerSpec::new(&cfg, frames);
                spec.seed = seed;
                cfg.tracks = spec.generate();
            }
            export_scene(cfg, frames, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

/// Composite PNG for `probe insert`.
pub fn insert_png(args: &InsertArgs) -> Result<Vec<u8>> {
    let products = SceneProducts::load(&args.scene)?;
    let sprite = Arc::new(Sprite::load(&args.sprite)?);
    let id = args
        .sprite
        .file_stem()
        .map_or_else(|| "sprite".to_string(), |s| s.to_string_lossy().into_owned());
    let mut placement = Placement::new(&products, id, sprite, args.x, args.y)?;
    if let Some(f) = args.height_override {
        placement.set_height_override(f)?;
    }
    if let Some(b) = args.brightness {
        placement.set_brightness(b)?;
    }
    let result = render_composite(&products, std::slice::from_ref(&placement), args.stages())?;
    encode_png(&result.i_final)
}

fn update_products(dir: &Path, edit: impl FnOnce(&mut SceneProducts)) -> Result<()> {
    if !SceneProducts::exists(dir) {
        return Ok(());
    }
    let mut products = SceneProducts::load(dir)?;
    edit(&mut products);
    products.save(dir)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}
