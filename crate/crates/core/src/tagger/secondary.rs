//! Simplified-LID head: a softmax over {lang1, lang2, other} computed from a
//! word's enhanced n-gram representation alone.

use super::labels::Simplified;
use crate::error::{Error, Result};
use crate::numerics::{add_assign, matvec_add, matvec_t_add, outer_add, softmax_in_place, DifferentiableOp, Tensor};

/// Class probabilities for one word; `w` is `3 × enhanced.len()`.
pub fn secondary_probs(w: &[f64], b: &[f64], enhanced: &[f64]) -> [f64; 3] {
    let mut p = [0.0; 3];
    p.copy_from_slice(b);
    matvec_add(w, enhanced.len(), enhanced, &mut p);
    softmax_in_place(&mut p);
    p
}

/// Accumulates `scale · ∂(−log p_y)` into the head and input gradients.
pub fn secondary_backward(
    w: &[f64],
    enhanced: &[f64],
    p: &[f64; 3],
    y: Simplified,
    scale: f64,
    (gw, gb, d_enh): (&mut [f64], &mut [f64], &mut [f64]),
) {
    let mut dz = *p;
    dz[y.index()] -= 1.0;
    dz.iter_mut().for_each(|v| *v *= scale);
    outer_add(gw, enhanced.len(), &dz, enhanced);
    add_assign(gb, &dz);
    matvec_t_add(w, enhanced.len(), &dz, d_enh);
}

/// Mean cross-entropy over the labelled rows of `[E (T × e), W (3 × e), b (3)]`.
pub struct SecondaryHeadOp {
    pub gold: Vec<Option<Simplified>>,
}

impl SecondaryHeadOp {
    fn dims(&self, inputs: &[Tensor]) -> Result<usize> {
        let [e, w, b] = inputs else { return Err(Error::dim("secondary_head", "expected [E, W, b]")) };
        let (&[t, d], &[3, wd], &[3]) = (e.shape(), w.shape(), b.shape()) else {
            return Err(Error::dim("secondary_head", "need E: T × e, W: 3 × e, b: 3"));
        };
        if t != self.gold.len() || wd != d {
            return Err(Error::dim("secondary_head", format!("{t} rows of width {d} with {} labels and W width {wd}", self.gold.len())));
        }
        if self.gold.iter().all(Option::is_none) {
            return Err(Error::Input("secondary head needs at least one labelled token".into()));
        }
        Ok(d)
    }

    fn labelled(&self) -> f64 {
        self.gold.iter().filter(|y| y.is_some()).count() as f64
    }
}

impl DifferentiableOp for SecondaryHeadOp {
    fn name(&self) -> &str {
        "secondary_head"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let d = self.dims(inputs)?;
        let (w, b) = (inputs[1].values(), inputs[2].values());
        let mut loss = 0.0;
        for (row, y) in inputs[0].values().chunks(d).zip(&self.gold) {
            if let Some(y) = y {
                loss -= secondary_probs(w, b, row)[y.index()].ln();
            }
        }
        Tensor::vector(vec![loss / self.labelled()])
    }

    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let d = self.dims(inputs)?;
        let (w, b) = (inputs[1].values(), inputs[2].values());
        let scale = grad_output.values()[0] / self.labelled();
        let mut ge = vec![0.0; inputs[0].len()];
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 3];
        for ((row, de), y) in inputs[0].values().chunks(d).zip(ge.chunks_mut(d)).zip(&self.gold) {
            if let Some(y) = y {
                let p = secondary_probs(w, b, row);
                secondary_backward(w, row, &p, *y, scale, (&mut gw, &mut gb, de));
            }
        }
        Ok(vec![
            Tensor::new(inputs[0].shape(), ge)?,
            Tensor::new(inputs[1].shape(), gw)?,
            Tensor::vector(gb)?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_is_uniform() {
        let p = secondary_probs(&[0.0; 6], &[0.0; 3], &[1.0, -2.0]);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let op = SecondaryHeadOp { gold: vec![Some(Simplified::Other), None] };
        let out = op.forward(&[Tensor::zeros(&[2, 2]), Tensor::zeros(&[3, 2]), Tensor::zeros(&[3])]).unwrap();
        assert!((out.values()[0] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unlabelled_rows_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let op = SecondaryHeadOp { gold: vec![None, Some(Simplified::Lang1)] };
        let x = [Tensor::uniform(&[2, 4], 1.0, &mut rng), Tensor::uniform(&[3, 4], 1.0, &mut rng), Tensor::uniform(&[3], 1.0, &mut rng)];
        let g = op.backward(&x, &Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert!(g[0].values()[..4].iter().all(|&v| v == 0.0));
        let none = SecondaryHeadOp { gold: vec![None, None] };
        assert!(none.forward(&x).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gold = vec![Some(Simplified::Lang2), None, Some(Simplified::Other), Some(Simplified::Lang1)];
            let x = [Tensor::uniform(&[4, 5], 1.0, &mut rng), Tensor::uniform(&[3, 5], 1.0, &mut rng), Tensor::uniform(&[3], 1.0, &mut rng)];
            let err = grad_check(&SecondaryHeadOp { gold }, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
