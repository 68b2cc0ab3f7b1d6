//! Core of a one-shot glyph style-transfer system.
//!
//! Everything here is `no_std` with `alloc`: a small reverse-mode autograd
//! over row-major `f64` matrices, the ViT masked-autoencoder backbone, the
//! bi-encoder cross-attention model, perceptual losses, image metrics, exact
//! style retrieval, dataset splitting and the evaluation harness. File
//! formats, rendering and the CLI live in the companion `glyphmae` crate.

#![no_std]

extern crate alloc;

pub mod backbone;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod glyph;
pub mod graph;
pub mod linalg;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod perceptual;
pub mod pretrain;
pub mod retrieval;
pub mod rng;
pub mod tensor;
pub mod train;

pub use backbone::{BackboneConfig, Decoder, Encoder, MaskedAutoencoder, TokenSequence};
pub use dataset::{DatasetManifest, Entry, FontRole, GlyphSource, Language, Split, SplitConfig, Triplet};
pub use error::{Error, Result};
pub use glyph::{Charcode, GlyphImage, PatchGrid};
pub use graph::{Graph, Var};
pub use losses::{LossBreakdown, LossWeights};
pub use mask::MaskSpec;
pub use model::StyleModel;
pub use params::{ParamGrads, ParamStore};
pub use perceptual::{FeatureExtractor, PerceptualTaps};
pub use retrieval::{StyleEmbedding, StyleIndex};
pub use rng::SeededRng;
pub use tensor::Matrix;
