use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamGroup, ParamStore};

/// Halves (by default) the rate once the monitored loss has failed to
/// improve for more than `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    lr: f64,
    best: f64,
    bad: usize,
}

impl Plateau {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self {
            patience,
            factor,
            lr,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch's loss; returns the rate for the next epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad = 0;
        } else {
            self.bad += 1;
            if self.bad > self.patience {
                self.lr *= self.factor;
                self.bad = 0;
            }
        }
        self.lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StlrConfig {
    pub lr_max: f64,
    pub cut_frac: f64,
    pub ratio: f64,
}

impl Default for StlrConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.01,
            cut_frac: 0.1,
            ratio: 32.0,
        }
    }
}

/// Slanted triangular rate at step `t` of `total`.
pub fn stlr(t: usize, total: usize, cfg: &StlrConfig) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("STLR needs at least one step".into()));
    }
    if t > total {
        return Err(Error::Precondition {
            op: "stlr",
            detail: format!("step {t} beyond total {total}"),
        });
    }
    let cut = (total as f64 * cfg.cut_frac).floor() as usize;
    let p = if t < cut {
        t as f64 / cut as f64
    } else if total == cut {
        1.0
    } else {
        1.0 - (t - cut) as f64 / (total - cut) as f64
    };
    Ok(cfg.lr_max * (1.0 + p * (cfg.ratio - 1.0)) / cfg.ratio)
}

/// Gradual unfreezing from the top group to the bottom, with
/// discriminative per-group rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSchedule {
    pub epochs_per_stage: usize,
    /// Rate multiplier per step down the group order.
    pub factor: f64,
}

impl Default for FinetuneSchedule {
    fn default() -> Self {
        Self {
            epochs_per_stage: 2,
            factor: 1.0 / 2.6,
        }
    }
}

impl FinetuneSchedule {
    pub fn stages() -> usize {
        ParamGroup::ALL.len()
    }

    pub fn stage_for_epoch(&self, epoch: usize) -> usize {
        (epoch / self.epochs_per_stage.max(1)).min(Self::stages())
    }

    pub fn group_scale(&self) -> [f64; 7] {
        super::optim::discriminative_scale(self.factor)
    }
}

/// Makes groups `0..=stage` trainable and freezes the rest.
pub fn gradual_unfreeze(store: &mut ParamStore, stage: usize) -> Result<()> {
    if stage > FinetuneSchedule::stages() {
        return Err(Error::Config(format!(
            "unfreeze stage {stage} beyond the last stage {}",
            FinetuneSchedule::stages()
        )));
    }
    for p in store.iter_mut() {
        p.trainable = p.group.index() <= stage;
    }
    Ok(())
}

/// Unfreezes the named groups, leaving the others as they are.
pub fn unfreeze_groups(store: &mut ParamStore, names: &[&str]) -> Result<()> {
    let groups: Vec<ParamGroup> = names.iter().map(|n| n.parse()).collect::<Result<_>>()?;
    for p in store.iter_mut().filter(|p| groups.contains(&p.group)) {
        p.trainable = true;
    }
    Ok(())
}
