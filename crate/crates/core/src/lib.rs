//! Scene probing and object compositing for fixed-camera video.

pub mod background;
pub mod cli;
pub mod composer;
pub mod dataio;
pub mod error;
pub mod groundplane;
pub mod layer;
pub mod lighting;
pub mod occlusion;
pub mod raster;
pub mod service;
pub mod shadow;
pub mod synth;

pub use error::{Error, Result, Stage};
