use serde::{Deserialize, Serialize};

use crate::numerics::{Gradients, ParamStore, Parameter};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the simplified-LID loss.
    pub beta: f64,
    /// L2 penalty coefficient.
    pub lambda: f64,
    pub exclude_crf_from_l2: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            lambda: 0.0,
            exclude_crf_from_l2: true,
        }
    }
}

impl LossConfig {
    fn penalized(&self, p: &Parameter) -> bool {
        p.trainable && !(self.exclude_crf_from_l2 && p.is_crf())
    }
}

/// Sum of squares over the parameters the L2 term covers.
pub fn l2_sum(store: &ParamStore, cfg: &LossConfig) -> f64 {
    store
        .iter()
        .filter(|(_, p)| cfg.penalized(p))
        .map(|(_, p)| p.tensor.sum_squares())
        .sum()
}

/// `primary + beta·secondary + lambda·Σw²`.
pub fn total_loss_from_parts(primary: f64, secondary: f64, sum_sq: f64, cfg: &LossConfig) -> f64 {
    primary + cfg.beta * secondary + cfg.lambda * sum_sq
}

pub fn total_loss(primary: f64, secondary: f64, store: &ParamStore, cfg: &LossConfig) -> f64 {
    let reg = if cfg.lambda == 0.0 { 0.0 } else { l2_sum(store, cfg) };
    total_loss_from_parts(primary, secondary, reg, cfg)
}

/// Adds `2·lambda·w` for every penalized parameter.
pub fn add_l2_gradients(store: &ParamStore, grads: &mut Gradients, cfg: &LossConfig) {
    if cfg.lambda == 0.0 {
        return;
    }
    for (id, p) in store.iter().filter(|(_, p)| cfg.penalized(p)) {
        for (g, w) in grads.buf(id).iter_mut().zip(p.tensor.values()) {
            *g += 2.0 * cfg.lambda * w;
        }
    }
}
