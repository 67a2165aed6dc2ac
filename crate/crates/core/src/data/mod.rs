//! Corpora, metrics, code-mixing statistics and the synthetic corpus generator.

pub mod cmi;
pub mod conll;
pub mod embeddings;
pub mod metrics;
pub mod stats;
pub mod synthetic;

pub use cmi::{compute_cmi, corpus_cmi, CmiReport};
pub use conll::{parse_conll, parse_conll_str, write_conll, Corpus, Sentence, Token};
pub use embeddings::EmbeddingTable;
pub use metrics::{accuracy, entity_f1, per_label_f1, wa_f1, weighted_f1, LabelScore};
pub use stats::{dataset_stats, CorpusStats};
pub use synthetic::{generate_synthetic, SyntheticSpec};
