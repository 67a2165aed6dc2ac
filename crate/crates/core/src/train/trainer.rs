use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::loss::{add_l2_gradients, total_loss, LossConfig};
use super::optim::{Adam, AdamConfig, UNIT_SCALE};
use super::schedule::{gradual_unfreeze, stlr, FinetuneSchedule, Plateau, StlrConfig};
use crate::data::{Corpus, EmbeddingTable, Sentence};
use crate::error::{Error, Result};
use crate::tagger::{BatchLoss, EncodedSentence, TaggerConfig, TaggerModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Plateau,
    Stlr,
}

impl FromStr for SchedulerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plateau" => Ok(Self::Plateau),
            "stlr" => Ok(Self::Stlr),
            _ => Err(Error::Config(format!("unknown scheduler `{s}` (plateau or stlr)"))),
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plateau => "plateau",
            Self::Stlr => "stlr",
        })
    }
}

/// How a pretrained encoder is reused for a new task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMode {
    /// Fresh random encoder.
    None,
    /// Pretrained encoder, never updated.
    Frozen,
    /// Pretrained encoder, trained with everything else.
    Trainable,
}

impl FromStr for TransferMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "frozen" => Ok(Self::Frozen),
            "trainable" => Ok(Self::Trainable),
            _ => Err(Error::Config(format!("unknown transfer mode `{s}` (none, frozen or trainable)"))),
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Frozen => "frozen",
            Self::Trainable => "trainable",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub scheduler: SchedulerKind,
    pub patience: usize,
    pub plateau_factor: f64,
    pub stlr: StlrConfig,
    /// Enables gradual unfreezing with discriminative rates.
    pub unfreeze: bool,
    pub finetune: FinetuneSchedule,
    pub loss: LossConfig,
    pub transfer: TransferMode,
    /// Stop once dev accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            seed: 1,
            adam: AdamConfig::default(),
            scheduler: SchedulerKind::Plateau,
            patience: 5,
            plateau_factor: 0.5,
            stlr: StlrConfig::default(),
            unfreeze: false,
            finetune: FinetuneSchedule::default(),
            loss: LossConfig::default(),
            transfer: TransferMode::None,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.loss.beta < 0.0 || self.loss.lambda < 0.0 {
            return Err(Error::Config("beta and lambda must be nonnegative".into()));
        }
        if !(self.adam.lr > 0.0) || !(self.stlr.lr_max > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.stlr.cut_frac) || self.stlr.ratio < 1.0 {
            return Err(Error::Config("STLR needs cut_frac in [0, 1) and ratio >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_weighted_f1: f64,
    pub per_label_f1: BTreeMap<String, f64>,
    pub dev_accuracy: f64,
    pub dev_secondary_accuracy: Option<f64>,
    pub stage: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The model from the epoch with the best dev weighted F1.
    pub best: TaggerModel,
    pub best_epoch: usize,
    pub log: Vec<EpochMetrics>,
}

impl TrainOutcome {
    /// First epoch (1-based) whose dev accuracy reached `target`.
    pub fn epochs_to_accuracy(&self, target: f64) -> Option<usize> {
        self.log.iter().find(|m| m.dev_accuracy >= target).map(|m| m.epoch)
    }
}

pub fn encode_all(model: &TaggerModel, sentences: &[Sentence]) -> Result<Vec<EncodedSentence>> {
    sentences.iter().map(|s| model.encode_sentence(s)).collect()
}

/// Mean multi-task loss over `data`, evaluated in batches.
pub fn dataset_loss(model: &TaggerModel, data: &[EncodedSentence], cfg: &TrainConfig) -> Result<f64> {
    let mut total = BatchLoss::default();
    let refs: Vec<&EncodedSentence> = data.iter().collect();
    for chunk in refs.chunks(cfg.batch_size.max(1)) {
        total.add(&model.batch_loss(chunk)?);
    }
    Ok(total_loss(total.primary(), total.secondary(), model.store(), &cfg.loss))
}

fn diverged(what: &str, detail: String) -> Error {
    Error::Numeric {
        op: what.to_string(),
        detail,
    }
}

/// Trains `model` on `corpus.train`, selecting by dev weighted F1.
pub fn train(model: TaggerModel, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, corpus, cfg, &mut |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch's evaluation.
pub fn train_with(
    mut model: TaggerModel,
    corpus: &Corpus,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.train.is_empty() || corpus.dev.is_empty() {
        return Err(Error::Input("training needs non-empty train and dev splits".into()));
    }
    if corpus.scheme != *model.scheme() {
        return Err(Error::Config("corpus and model use different label schemes".into()));
    }
    let train_data = encode_all(&model, &corpus.train)?;
    let dev_data = encode_all(&model, &corpus.dev)?;
    let lock_encoder = cfg.transfer == TransferMode::Frozen;
    if lock_encoder {
        model.set_encoder_trainable(false);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, model.store());
    let mut plateau = Plateau::new(cfg.adam.lr, cfg.patience, cfg.plateau_factor);
    let batches_per_epoch = train_data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let scale = if cfg.unfreeze { cfg.finetune.group_scale() } else { UNIT_SCALE };
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut step = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, TaggerModel)> = None;

    for epoch in 0..cfg.epochs {
        let stage = cfg.unfreeze.then(|| cfg.finetune.stage_for_epoch(epoch));
        if let Some(s) = stage {
            gradual_unfreeze(model.store_mut(), s)?;
            if lock_encoder {
                model.set_encoder_trainable(false);
            }
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = plateau.lr();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EncodedSentence> = idx.iter().map(|&i| &train_data[i]).collect();
            let mut grads = model.store().gradients();
            let bl = model.batch_gradients(&batch, cfg.loss.beta, &mut grads)?;
            add_l2_gradients(model.store(), &mut grads, &cfg.loss);
            let loss = total_loss(bl.primary(), bl.secondary(), model.store(), &cfg.loss);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged("train", format!("non-finite loss or gradient at epoch {} batch {b}", epoch + 1)));
            }
            loss_sum += loss;
            lr = match cfg.scheduler {
                SchedulerKind::Plateau => plateau.lr(),
                SchedulerKind::Stlr => stlr(step, total_steps, &cfg.stlr)?,
            };
            adam.step(model.store_mut(), &grads, lr, &scale)?;
            step += 1;
        }
        let train_loss = loss_sum / batches_per_epoch as f64;
        let dev_loss = dataset_loss(&model, &dev_data, cfg)?;
        if !dev_loss.is_finite() {
            return Err(diverged("train", format!("non-finite dev loss at epoch {}", epoch + 1)));
        }
        if cfg.scheduler == SchedulerKind::Plateau {
            plateau.step(dev_loss);
        }
        let (report, _) = evaluate(&model, &corpus.dev)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr,
            train_loss,
            dev_loss,
            dev_weighted_f1: report.weighted_f1,
            per_label_f1: report.per_label.iter().map(|s| (s.label.clone(), s.f1)).collect(),
            dev_accuracy: report.accuracy,
            dev_secondary_accuracy: report.secondary_accuracy,
            stage,
        };
        info!(
            "epoch {} lr {:.2e} train {:.4} dev {:.4} f1 {:.4} acc {:.4}",
            m.epoch, m.lr, m.train_loss, m.dev_loss, m.dev_weighted_f1, m.dev_accuracy
        );
        on_epoch(&m);
        if best.as_ref().is_none_or(|b| m.dev_weighted_f1 > b.0) {
            best = Some((m.dev_weighted_f1, m.epoch, model.clone()));
        }
        let stop = cfg.stop_at_accuracy.is_some_and(|t| m.dev_accuracy >= t);
        log.push(m);
        if stop {
            break;
        }
    }
    let (_, best_epoch, mut best) = best.ok_or_else(|| Error::Config("epochs must be positive".into()))?;
    for p in best.store_mut().iter_mut() {
        p.trainable = true;
    }
    Ok(TrainOutcome { best, best_epoch, log })
}

/// Builds a model for `corpus` around `pretrained`'s encoder according to
/// `cfg.transfer`, then trains it.
pub fn transfer(
    pretrained: &TaggerModel,
    corpus: &Corpus,
    config: TaggerConfig,
    static_tables: Vec<EmbeddingTable>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    transfer_with(pretrained, corpus, config, static_tables, cfg, &mut |_| {})
}

pub fn transfer_with(
    pretrained: &TaggerModel,
    corpus: &Corpus,
    config: TaggerConfig,
    static_tables: Vec<EmbeddingTable>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let mut model = TaggerModel::new(config, corpus.scheme.clone(), pretrained.vocab().clone(), static_tables, cfg.seed)?;
    match cfg.transfer {
        TransferMode::None => {}
        TransferMode::Frozen => {
            model.copy_encoder_from(pretrained)?;
            model.set_encoder_trainable(false);
        }
        TransferMode::Trainable => model.copy_encoder_from(pretrained)?,
    }
    train_with(model, corpus, cfg, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::encoder::{CharVocab, EncoderConfig, PoolingMode};
    use crate::tagger::{TaggerFlags, Task};

    fn small_tagger() -> TaggerConfig {
        TaggerConfig {
            encoder: EncoderConfig {
                char_vocab_size: 0,
                char_emb_dim: 6,
                orders: vec![1, 2, 3],
                channels: vec![6, 6, 8],
                max_word_len: 20,
                attention_dim: 8,
                pooling: PoolingMode::PosHierAttn,
                token_dim: 12,
                highway: true,
            },
            hidden: 8,
            flags: TaggerFlags {
                concat_ngram_to_crf: true,
                use_secondary: true,
                use_static: false,
            },
        }
    }

    fn corpus(n: usize, task: Task) -> Corpus {
        generate_synthetic(&SyntheticSpec { sentences: n, task, ..SyntheticSpec::demo(10, 3) }).unwrap()
    }

    fn vocab(c: &Corpus) -> CharVocab {
        CharVocab::from_words(c.train.iter().chain(&c.dev).flat_map(|s| s.tokens.iter().map(|t| t.surface.as_str())))
    }

    fn fresh(c: &Corpus, seed: u64) -> TaggerModel {
        TaggerModel::new(small_tagger(), c.scheme.clone(), vocab(c), vec![], seed).unwrap()
    }

    #[test]
    fn one_epoch_reduces_loss() {
        let c = corpus(14, Task::Lid);
        let m = fresh(&c, 0);
        let cfg = TrainConfig { epochs: 1, batch_size: 2, adam: AdamConfig { lr: 0.01, ..AdamConfig::default() }, ..TrainConfig::default() };
        let data = encode_all(&m, &c.train).unwrap();
        let before = dataset_loss(&m, &data, &cfg).unwrap();
        let out = train(m, &c, &cfg).unwrap();
        let after = dataset_loss(&out.best, &data, &cfg).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn same_seed_same_log_and_weights() {
        let c = corpus(20, Task::Lid);
        let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
        let a = train(fresh(&c, 1), &c, &cfg).unwrap();
        let b = train(fresh(&c, 1), &c, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a.log).unwrap(), serde_json::to_string(&b.log).unwrap());
        assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    }

    #[test]
    fn frozen_transfer_keeps_encoder_bytes() {
        let lid = corpus(20, Task::Lid);
        let pre = train(fresh(&lid, 2), &lid, &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap().best;
        let pos = corpus(20, Task::Pos);
        let cfg = TrainConfig { epochs: 2, transfer: TransferMode::Frozen, unfreeze: true, ..TrainConfig::default() };
        let out = transfer(&pre, &pos, small_tagger(), vec![], &cfg).unwrap();
        assert_eq!(out.best.encoder_checksum(), pre.encoder_checksum());
        let cfg = TrainConfig { transfer: TransferMode::Trainable, ..cfg };
        let out = transfer(&pre, &pos, small_tagger(), vec![], &cfg).unwrap();
        assert_ne!(out.best.encoder_checksum(), pre.encoder_checksum());
    }

    #[test]
    fn transfer_shape_mismatch_is_a_load_error() {
        let lid = corpus(10, Task::Lid);
        let pre = fresh(&lid, 0);
        let mut cfg = small_tagger();
        cfg.encoder.token_dim = 10;
        let tc = TrainConfig { epochs: 1, transfer: TransferMode::Frozen, ..TrainConfig::default() };
        let e = transfer(&pre, &corpus(10, Task::Pos), cfg, vec![], &tc).unwrap_err();
        assert!(matches!(e, Error::Load(_)));
        assert!(e.to_string().contains("encoder.proj.W"));
    }

    #[test]
    fn divergence_is_numeric() {
        let c = corpus(10, Task::Lid);
        let mut m = fresh(&c, 0);
        let id = m.store().id_of("crf.emission.b").unwrap();
        m.store_mut().get_mut(id).tensor.values_mut()[0] = f64::NAN;
        let e = train(m, &c, &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn empty_split_is_input_error() {
        let mut c = corpus(10, Task::Lid);
        c.dev.clear();
        let m = fresh(&corpus(10, Task::Lid), 0);
        assert!(matches!(train(m, &c, &TrainConfig::default()), Err(Error::Input(_))));
    }
}
