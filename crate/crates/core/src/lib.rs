//! Hierarchical matching pursuit (HMP) features for content-based image retrieval.
//!
//! The crate is organised bottom-up:
//!
//! - [`sparse_coding`]: orthogonal matching pursuit and vector quantization against a
//!   unit-norm [`Dictionary`], plus the `HMPD` dictionary file format.
//! - [`dictionary`]: KSVD codebook training with an optional mutual-incoherence penalty.
//! - [`image`] and [`patches`]: raster decoding, dense patch extraction and cell grouping.
//! - [`encoder`]: the multi-layer encoder (signed max pooling, cell concatenation,
//!   spatial pyramid pooling) and the bag-of-features baseline.
//! - [`index`]: inverted-file cosine search with an exhaustive-scan oracle.
//! - [`eval`]: average precision and mAP over a ground-truth file.
//! - [`cli`]: the `train-dict` / `encode` / `build-index` / `query` / `evaluate` workflow
//!   driven by a TOML run configuration.
//!
//! Runnable walkthroughs of each capability live in the `examples/` directory of this crate.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod descriptor;
pub mod dictionary;
pub mod encoder;
mod error;
pub mod eval;
pub mod image;
pub mod index;
pub mod patches;
pub mod sparse_coding;
pub mod synth;

pub use descriptor::{ImageDescriptor, SparseVector};
pub use dictionary::{train, Coherence, TrainConfig, TrainingSet};
pub use encoder::{ArchitectureConfig, HmpEncoder, LayerConfig, UnitPooling};
pub use error::{Error, Result};
pub use eval::{average_precision, evaluate, EvalReport, GroundTruth};
pub use image::IntensityImage;
pub use index::{exhaustive_scan, InvertedIndex, RankedResult};
pub use sparse_coding::{l2_normalize, omp_encode, vq_encode, Dictionary, SparseCode};
