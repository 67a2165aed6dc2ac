//! Character n-gram word encoder with position-aware hierarchical attention.

pub mod attention;
mod config;
#[allow(clippy::module_inception)]
mod encoder;
pub mod highway;
mod trace;
pub mod vocab;

pub use attention::{
    hierarchical_attention, hierarchical_attention_backward, maxpool_downsample, position_aware_attention,
    position_aware_attention_backward,
};
pub use config::{EncoderConfig, PoolingMode};
pub use encoder::{
    ActualPositions, CharNgramEncoder, OrderForward, Pooled, PositionSampler, ShuffledPositions,
    WordForward,
};
pub use highway::HighwayOp;
pub use trace::{AttentionTrace, NgramWeight, OrderTrace, TraceRecord};
pub use vocab::CharVocab;
