//! BiLSTM-CRF sequence tagger on top of the character n-gram encoder.

pub mod bilstm;
pub mod crf;
mod labels;
mod model;
pub mod secondary;

pub use bilstm::{BiLstm, BiLstmOp};
pub use crf::{crf_log_likelihood, viterbi_decode, Chain, CrfNllOp};
pub use labels::{simplify, LabelScheme, Simplified, Task, CALCS_LABELS, UNIVERSAL_POS};
pub use secondary::SecondaryHeadOp;
pub use model::{BatchLoss, EncodedSentence, Prediction, TaggerConfig, TaggerFlags, TaggerModel};
