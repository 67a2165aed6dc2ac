//! Sequence labeling with position-aware hierarchical attention over
//! character n-gram convolutions.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense tensors, hand-written backward passes, gradient checks
//! - [`encoder`]: the character n-gram word encoder and its attention pooling
//! - [`tagger`]: BiLSTM + CRF tagger with a morphology-only secondary head
//! - [`train`]: multi-task loss, Adam, schedulers, gradual unfreezing, transfer
//! - [`data`]: corpora, label schemes, synthetic data, metrics and statistics
//! - [`cli`]: the `morphtag` command-line front end

pub mod data;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod tagger;
pub mod train;
pub mod cli;

pub use error::{Error, Result};
