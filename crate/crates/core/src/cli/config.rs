use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::encoder::{EncoderConfig, PoolingMode};
use crate::error::{Error, Result};
use crate::tagger::{TaggerConfig, TaggerFlags, Task};
use crate::train::{
    AdamConfig, FinetuneSchedule, LossConfig, SchedulerKind, StlrConfig, TrainConfig, TransferMode,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub char_emb_dim: usize,
    pub orders: Vec<usize>,
    pub channels: Vec<usize>,
    pub max_word_len: usize,
    pub attention_dim: usize,
    pub pooling: PoolingMode,
    pub token_dim: usize,
    pub highway: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            char_emb_dim: e.char_emb_dim,
            orders: e.orders,
            channels: e.channels,
            max_word_len: e.max_word_len,
            attention_dim: e.attention_dim,
            pooling: e.pooling,
            token_dim: e.token_dim,
            highway: e.highway,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub hidden: usize,
    pub concat_ngram_to_crf: bool,
    pub use_secondary: bool,
    pub use_static: bool,
}

impl Default for TaggerSection {
    fn default() -> Self {
        let t = TaggerConfig::default();
        Self {
            hidden: t.hidden,
            concat_ngram_to_crf: t.flags.concat_ngram_to_crf,
            use_secondary: t.flags.use_secondary,
            use_static: t.flags.use_static,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler: SchedulerKind,
    pub patience: usize,
    pub plateau_factor: f64,
    pub stlr_lr_max: f64,
    pub stlr_cut_frac: f64,
    pub stlr_ratio: f64,
    pub unfreeze: bool,
    pub epochs_per_stage: usize,
    pub discriminative_factor: f64,
    pub beta: f64,
    pub lambda: f64,
    pub transfer: TransferMode,
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            scheduler: t.scheduler,
            patience: t.patience,
            plateau_factor: t.plateau_factor,
            stlr_lr_max: t.stlr.lr_max,
            stlr_cut_frac: t.stlr.cut_frac,
            stlr_ratio: t.stlr.ratio,
            unfreeze: t.unfreeze,
            epochs_per_stage: t.finetune.epochs_per_stage,
            discriminative_factor: t.finetune.factor,
            beta: t.loss.beta,
            lambda: t.loss.lambda,
            transfer: t.transfer,
            stop_at_accuracy: t.stop_at_accuracy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub task: Task,
    /// One label per line; overrides the built-in inventory.
    pub scheme_file: Option<PathBuf>,
    /// Entity types for a BIO scheme when no scheme file is given.
    pub entity_types: Vec<String>,
    pub repair_bio: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            task: Task::Lid,
            scheme_file: None,
            entity_types: Vec::new(),
            repair_bio: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Directory holding `train.conll`, `dev.conll` and `test.conll`.
    pub data_dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Vec<PathBuf>,
    pub pretrained: Option<PathBuf>,
}

/// Everything a training run depends on. Written back out as
/// `config.resolved` next to the run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub encoder: EncoderSection,
    pub tagger: TaggerSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            encoder: EncoderSection::default(),
            tagger: TaggerSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    /// Builds a config from an optional file plus `section.key=value`
    /// overrides applied in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for (key, value) in overrides {
            set_key(&mut table, key, value.clone())?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().to_string()))?;
        cfg.tagger_config(2)?.encoder.validate()?;
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn tagger_config(&self, char_vocab_size: usize) -> Result<TaggerConfig> {
        let e = &self.encoder;
        Ok(TaggerConfig {
            encoder: EncoderConfig {
                char_vocab_size,
                char_emb_dim: e.char_emb_dim,
                orders: e.orders.clone(),
                channels: e.channels.clone(),
                max_word_len: e.max_word_len,
                attention_dim: e.attention_dim,
                pooling: e.pooling,
                token_dim: e.token_dim,
                highway: e.highway,
            },
            hidden: self.tagger.hidden,
            flags: TaggerFlags {
                concat_ngram_to_crf: self.tagger.concat_ngram_to_crf,
                use_secondary: self.tagger.use_secondary,
                use_static: self.tagger.use_static,
            },
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            scheduler: t.scheduler,
            patience: t.patience,
            plateau_factor: t.plateau_factor,
            stlr: StlrConfig {
                lr_max: t.stlr_lr_max,
                cut_frac: t.stlr_cut_frac,
                ratio: t.stlr_ratio,
            },
            unfreeze: t.unfreeze,
            finetune: FinetuneSchedule {
                epochs_per_stage: t.epochs_per_stage,
                factor: t.discriminative_factor,
            },
            loss: LossConfig {
                beta: t.beta,
                lambda: t.lambda,
                ..LossConfig::default()
            },
            transfer: t.transfer,
            stop_at_accuracy: t.stop_at_accuracy,
        }
    }
}

/// Sets `a.b.c` in a nested table, creating intermediate tables.
pub fn set_key(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let slot = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = slot
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is read as a TOML literal when it is one
/// and as a bare string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    Ok((k.trim().to_string(), literal(v.trim())))
}

pub fn literal(v: &str) -> Value {
    format!("x = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| Value::String(v.to_string()))
}
