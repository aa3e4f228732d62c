use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::background::background_image;
use crate::dataio::{SceneManifest, SceneSource, PERSON_CONFIDENCE};
use crate::error::{Error, Result, Stage};
use crate::groundplane::{fit_plane, HeightSample, PlaneModel};
use crate::lighting::{build_lighting_map, LightingMap};
use crate::occlusion::{build_occlusion_map, observe_scene, ObserveConfig, OcclusionMap};
use crate::raster::{encode_png, load_rgb, write_file};
use crate::shadow::{collect_shadow_evidence, fit_shadow_model, ShadowConfig, ShadowModel};

pub const PRODUCTS_FILE: &str = "probe_products.json";
pub const OCCLUSION_FILE: &str = "occlusion.bin";
pub const LIGHTING_FILE: &str = "lighting.bin";
pub const BACKGROUND_FILE: &str = "background.png";
pub const PRODUCTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub observe: ObserveConfig,
    pub shadow: ShadowConfig,
    /// Only these classes, at or above `plane_confidence`, feed the plane fit.
    pub plane_classes: Vec<String>,
    pub plane_confidence: f32,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            observe: ObserveConfig::default(),
            shadow: ShadowConfig::default(),
            plane_classes: vec!["person".to_string()],
            plane_confidence: PERSON_CONFIDENCE,
        }
    }
}

/// A stage that did not produce its product; the rest of the build went on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

/// Contents of `probe_products.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductsInfo {
    pub version: u32,
    pub scene: SceneManifest,
    pub train_frames: usize,
    pub observations: usize,
    pub plane: Option<PlaneModel>,
    pub shadow: ShadowModel,
    pub failures: Vec<StageFailure>,
    pub background_file: String,
    pub occlusion_file: String,
    pub lighting_file: String,
    pub config: BuildConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneProducts {
    pub info: ProductsInfo,
    pub background: RgbImage,
    pub occlusion: OcclusionMap,
    pub lighting: LightingMap,
}

impl SceneProducts {
    pub fn dimensions(&self) -> (u32, u32) {
        self.background.dimensions()
    }

    pub fn plane(&self) -> Result<&PlaneModel> {
        self.info.plane.as_ref().ok_or_else(|| {
            let why = self
                .info
                .failures
                .iter()
                .find(|f| f.stage == Stage::Plane)
                .map_or_else(String::new, |f| format!(" ({})", f.message));
            Error::Unavailable(format!("ground plane{why}")).at_stage(Stage::Plane)
        })
    }

    pub fn shadow(&self) -> &ShadowModel {
        &self.info.shadow
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(PRODUCTS_FILE).is_file()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.info).map_err(|e| Error::json(dir.join(PRODUCTS_FILE), e))?;
        write_file(&dir.join(&self.info.background_file), &encode_png(&self.background)?)?;
        write_file(&dir.join(&self.info.occlusion_file), &self.occlusion.to_bytes())?;
        write_file(&dir.join(&self.info.lighting_file), &self.lighting.to_bytes())?;
        write_file(&dir.join(PRODUCTS_FILE), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(PRODUCTS_FILE);
        if !path.is_file() {
            return Err(Error::MissingProducts(dir.to_path_buf()));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let info: ProductsInfo = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let background = load_rgb(&dir.join(&info.background_file))?;
        let occlusion = OcclusionMap::load(&dir.join(&info.occlusion_file))?;
        let lighting = LightingMap::load(&dir.join(&info.lighting_file))?;
        let dims = (info.scene.width, info.scene.height);
        crate::raster::check_dims(dims, background.dimensions())?;
        crate::raster::check_dims(dims, occlusion.dimensions())?;
        crate::raster::check_dims(dims, lighting.dimensions())?;
        Ok(Self {
            info,
            background,
            occlusion,
            lighting,
        })
    }
}

/// Run every probe over the training split.
///
/// Plane and shadow failures are recorded in `info.failures` instead of
/// aborting; a scene without shadow evidence gets a contact shadow.
pub fn build_products(source: &dyn SceneSource, config: &BuildConfig) -> Result<SceneProducts> {
    let manifest = source.manifest().clone();
    manifest.validate()?;
    let (w, h) = manifest.dimensions();

    let observations = observe_scene(source, &config.observe).map_err(|e| e.at_stage(Stage::Observe))?;
    let occlusion = build_occlusion_map(w, h, &observations);
    let lighting = build_lighting_map(w, h, &observations);

    let mut failures = Vec::new();
    let samples: Vec<HeightSample> = observations
        .iter()
        .filter(|o| o.confidence >= config.plane_confidence && config.plane_classes.contains(&o.class_name))
        .map(HeightSample::from_observation)
        .collect();
    let plane = match fit_plane(&samples) {
        Ok(p) => Some(p),
        Err(e) => {
            failures.push(StageFailure {
                stage: Stage::Plane,
                message: e.to_string(),
            });
            None
        }
    };

    let evidence = collect_shadow_evidence(source, &config.observe, &config.shadow).map_err(|e| e.at_stage(Stage::Shadow))?;
    let shadow = match fit_shadow_model(&evidence, &config.shadow) {
        Ok(m) => m,
        Err(e @ (Error::NoShadowEvidence | Error::InsufficientSamples { .. })) => {
            failures.push(StageFailure {
                stage: Stage::Shadow,
                message: e.to_string(),
            });
            ShadowModel::contact(&config.shadow)
        }
        Err(e) => return Err(e.at_stage(Stage::Shadow)),
    };

    let background =
        background_image(source, config.observe.min_confidence).map_err(|e| e.at_stage(Stage::Background))?;

    Ok(SceneProducts {
        info: ProductsInfo {
            version: PRODUCTS_VERSION,
            train_frames: manifest.train_frames(),
            scene: manifest,
            observations: observations.len(),
            plane,
            shadow,
            failures,
            background_file: BACKGROUND_FILE.to_string(),
            occlusion_file: OCCLUSION_FILE.to_string(),
            lighting_file: LIGHTING_FILE.to_string(),
            config: config.clone(),
        },
        background,
        occlusion,
        lighting,
    })
}

/// Build products for the scene in `scene_dir` and store them there.
pub fn build_scene_dir(scene_dir: &Path, config: &BuildConfig) -> Result<SceneProducts> {
    let dataset = crate::dataio::Dataset::open(scene_dir)?;
    let products = build_products(&dataset, config)?;
    products.save(dataset.root())?;
    Ok(products)
}

