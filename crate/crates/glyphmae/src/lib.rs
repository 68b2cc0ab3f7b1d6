//! Rendering, file formats, training stages and serving for `glyphmae-core`.

use std::path::PathBuf;

pub use glyphmae_core as core;

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod engine;
pub mod fontgen;
pub mod imageio;
pub mod index_file;
pub mod manifest;
pub mod render;
pub mod serve;
pub mod stages;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no checkpoint at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("no .ttf/.otf fonts in {0}")]
    NoFonts(PathBuf),
}
