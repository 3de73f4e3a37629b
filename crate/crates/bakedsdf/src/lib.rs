//! File formats, datasets, checkpoints, the glTF export and the staged
//! command-line pipeline built on `bakedsdf-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gltf;
pub mod image_io;
pub mod manifest;
pub mod mesh_io;
pub mod scene_file;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
pub use stages::{Pipeline, Stage};
