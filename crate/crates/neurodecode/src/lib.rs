//! Word decoding from multichannel brain-like time series.
//!
//! The crate covers the full pipeline: continuous-recording preprocessing and
//! word-locked epoching, a contrastively trained encoder (spatial attention →
//! subject layer → conv stack → attention pooling → sentence transformer)
//! predicting word embeddings, contrastive objectives (CLIP, SigLIP and its
//! deduplicated variant), AdamW training with cosine decay and early stopping,
//! a ridge-regression baseline, and a word-retrieval evaluation battery.
//!
//! Everything is validated end to end on a synthetic dataset with a known
//! forward model; see the guide under `book/` for a chapter-by-chapter tour.

pub mod corpus;
pub mod diffcore;
pub mod eval;
pub mod model;
pub mod train;
pub mod objective;
pub mod signal;
pub mod error;
pub mod util;

pub use error::{Error, Result};
