use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("empty scene")]
    EmptyScene,

    #[error("format error: {0}")]
    Format(String),

    #[error("missing mask file {0}")]
    MissingMaskFile(PathBuf),

    #[error("missing frame file {0}")]
    MissingFrame(PathBuf),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("frame {index} out of range (scene has {count} frames)")]
    FrameOutOfRange { index: usize, count: usize },

    #[error("empty median window")]
    EmptyWindow,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("ill-conditioned sample geometry (singular value ratio {ratio:.3e})")]
    IllConditioned { ratio: f64 },

    #[error("placement off the walkable plane: predicted height {height:.2} px at ({x:.1}, {y:.1})")]
    OffPlane { x: f64, y: f64, height: f64 },

    #[error("no shadow evidence")]
    NoShadowEvidence,

    #[error("lighting anchor must have strictly positive channels, got {0:?}")]
    ZeroAnchor([f32; 3]),

    #[error("invalid placement: {0}")]
    InvalidPlacement(String),

    #[error("{0} not available")]
    Unavailable(String),

    #[error("scene products missing in {0}")]
    MissingProducts(PathBuf),

    #[error("invalid synthetic config: {0}")]
    SynthConfig(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

/// Pipeline stage used to attribute failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Background,
    Observe,
    Occlusion,
    Lighting,
    Plane,
    Shadow,
    Scale,
    Composite,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Background => "background",
            Stage::Observe => "observe",
            Stage::Occlusion => "occlusion",
            Stage::Lighting => "lighting",
            Stage::Plane => "plane",
            Stage::Shadow => "shadow",
            Stage::Scale => "scale",
            Stage::Composite => "composite",
        };
        f.write_str(name)
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Stage attribution, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
