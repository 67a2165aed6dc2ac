use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamGroup, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments, one slot per parameter. Step counts are kept per
/// parameter so groups unfrozen late get their own bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            steps: vec![0; store.len()],
        }
    }

    pub fn moments(&self, k: usize) -> (&[f64], &[f64]) {
        (&self.m[k], &self.v[k])
    }

    /// One update with base rate `lr`, scaled per group by `group_scale`
    /// (indexed by [`ParamGroup::index`]). Frozen parameters and their
    /// state are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64, group_scale: &[f64; 7]) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::dim("adam_step", format!("{} parameters but state for {}", store.len(), self.m.len())));
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let g = grads.get(id);
            if g.len() != p.tensor.len() || self.m[k].len() != g.len() {
                return Err(Error::dim("adam_step", format!("shape mismatch for `{}`", p.name)));
            }
            if !p.trainable {
                continue;
            }
            self.steps[k] += 1;
            let t = self.steps[k] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let rate = lr * group_scale[p.group.index()];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for ((w, &gi), (mi, vi)) in p.tensor.values_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *w -= rate * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub const UNIT_SCALE: [f64; 7] = [1.0; 7];

/// Per-group rate multipliers `factor^index` in unfreeze order.
pub fn discriminative_scale(factor: f64) -> [f64; 7] {
    let mut s = [1.0; 7];
    for g in ParamGroup::ALL {
        s[g.index()] = factor.powi(g.index() as i32);
    }
    s
}
