//! Emotion-aware multimodal fusion with prompt-based classification.
//!
//! This crate implements a news-veracity classifier that combines three
//! ingredients:
//!
//! * lexicon-based sentiment scores that re-weight text embeddings
//!   ([`sentiment`]),
//! * multi-head cross-attention fusion of text and image features with a
//!   similarity-aware gate ([`fusion`]),
//! * a hybrid prompt (fixed template plus trainable head/tail tokens) whose
//!   mask representation is classified through a verbalizer ([`prompt`]).
//!
//! Text and image encoders stay out of process: the pipeline consumes
//! precomputed feature vectors from an [`store::EmbeddingStore`], which makes
//! every numerical path testable at small dimensions. Training, few-shot
//! episode sampling, metrics and multi-seed aggregation live in [`trainer`];
//! the experiment harness (emotion statistics, main runs, alpha sweeps,
//! ablations) lives in [`experiment`] and is also exposed through the `ample`
//! command-line binary.
//!
//! All differentiable paths run on a small reverse-mode tape ([`autodiff`])
//! over `f64` matrices, so analytic gradients can be verified against central
//! finite differences.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod model;
pub mod prompt;
pub mod sentiment;
pub mod store;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{AmpleError, Result};
