use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, DifferentiableOp, Init, ParamGroup, ParamSpec, Tensor};

/// Score assigned to transitions into START and out of STOP.
pub const FORBIDDEN: f64 = -1e4;

/// Linear-chain CRF scoring over `l` labels. The transition matrix is
/// `(l+2) × (l+2)` with START at index `l` and STOP at `l+1`; entry
/// `[a][b]` scores moving from `a` to `b`.
#[derive(Clone, Copy, Debug)]
pub struct Chain<'a> {
    pub em: &'a [f64],
    pub trans: &'a [f64],
    pub l: usize,
}

impl<'a> Chain<'a> {
    pub fn new(em: &'a [f64], trans: &'a [f64], l: usize) -> Result<Self> {
        if l == 0 || em.is_empty() || em.len() % l != 0 {
            return Err(Error::dim("crf", format!("emissions of length {} are not T × {l} with T ≥ 1", em.len())));
        }
        if trans.len() != (l + 2) * (l + 2) {
            return Err(Error::dim("crf", format!("transitions must be {0} × {0}", l + 2)));
        }
        Ok(Self { em, trans, l })
    }

    pub fn len(&self) -> usize {
        self.em.len() / self.l
    }

    pub fn is_empty(&self) -> bool {
        self.em.is_empty()
    }

    #[inline]
    fn tr(&self, a: usize, b: usize) -> f64 {
        self.trans[a * (self.l + 2) + b]
    }

    #[inline]
    fn e(&self, t: usize, y: usize) -> f64 {
        self.em[t * self.l + y]
    }

    fn start(&self) -> usize {
        self.l
    }

    fn stop(&self) -> usize {
        self.l + 1
    }

    pub fn check_path(&self, path: &[usize]) -> Result<()> {
        if path.len() != self.len() {
            return Err(Error::Input(format!("label sequence has {} entries for {} tokens", path.len(), self.len())));
        }
        if let Some(&y) = path.iter().find(|&&y| y >= self.l) {
            return Err(Error::Input(format!("label index {y} out of range for {} labels", self.l)));
        }
        Ok(())
    }

    /// Unnormalized log score of a label sequence, including both boundaries.
    pub fn score(&self, path: &[usize]) -> Result<f64> {
        self.check_path(path)?;
        let mut s = self.tr(self.start(), path[0]);
        for (t, &y) in path.iter().enumerate() {
            s += self.e(t, y);
            if t > 0 {
                s += self.tr(path[t - 1], y);
            }
        }
        Ok(s + self.tr(path[path.len() - 1], self.stop()))
    }

    /// Log-space forward variables, `T × l`.
    fn alphas(&self) -> Vec<f64> {
        let (n, l) = (self.len(), self.l);
        let mut a = vec![0.0; n * l];
        for y in 0..l {
            a[y] = self.tr(self.start(), y) + self.e(0, y);
        }
        let mut buf = vec![0.0; l];
        for t in 1..n {
            for y in 0..l {
                for (p, b) in buf.iter_mut().enumerate() {
                    *b = a[(t - 1) * l + p] + self.tr(p, y);
                }
                a[t * l + y] = log_sum_exp(&buf) + self.e(t, y);
            }
        }
        a
    }

    /// Log-space backward variables, `T × l`, including the STOP transition.
    fn betas(&self) -> Vec<f64> {
        let (n, l) = (self.len(), self.l);
        let mut b = vec![0.0; n * l];
        for y in 0..l {
            b[(n - 1) * l + y] = self.tr(y, self.stop());
        }
        let mut buf = vec![0.0; l];
        for t in (0..n - 1).rev() {
            for y in 0..l {
                for (q, v) in buf.iter_mut().enumerate() {
                    *v = self.tr(y, q) + self.e(t + 1, q) + b[(t + 1) * l + q];
                }
                b[t * l + y] = log_sum_exp(&buf);
            }
        }
        b
    }

    fn log_z_from(&self, alphas: &[f64]) -> f64 {
        let (n, l) = (self.len(), self.l);
        let last: Vec<f64> = (0..l).map(|y| alphas[(n - 1) * l + y] + self.tr(y, self.stop())).collect();
        log_sum_exp(&last)
    }

    /// Log partition function by the forward algorithm.
    pub fn log_partition(&self) -> f64 {
        self.log_z_from(&self.alphas())
    }

    pub fn nll(&self, gold: &[usize]) -> Result<f64> {
        let s = self.score(gold)?;
        Ok(self.log_partition() - s)
    }

    /// NLL with gradients wrt emissions (`T × l`) and transitions.
    /// Gradients of the forbidden START-column and STOP-row entries are zero.
    pub fn nll_backward(&self, gold: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let s = self.score(gold)?;
        let (n, l) = (self.len(), self.l);
        let w = l + 2;
        let a = self.alphas();
        let b = self.betas();
        let z = self.log_z_from(&a);
        let mut d_em = vec![0.0; n * l];
        let mut d_tr = vec![0.0; w * w];
        for t in 0..n {
            for y in 0..l {
                d_em[t * l + y] = (a[t * l + y] + b[t * l + y] - z).exp();
            }
        }
        for y in 0..l {
            d_tr[self.start() * w + y] = d_em[y];
            d_tr[y * w + self.stop()] = d_em[(n - 1) * l + y];
        }
        for t in 1..n {
            for p in 0..l {
                for y in 0..l {
                    let lp = a[(t - 1) * l + p] + self.tr(p, y) + self.e(t, y) + b[t * l + y] - z;
                    d_tr[p * w + y] += lp.exp();
                }
            }
        }
        for (t, &y) in gold.iter().enumerate() {
            d_em[t * l + y] -= 1.0;
            if t > 0 {
                d_tr[gold[t - 1] * w + y] -= 1.0;
            }
        }
        d_tr[self.start() * w + gold[0]] -= 1.0;
        d_tr[gold[n - 1] * w + self.stop()] -= 1.0;
        Ok((z - s, d_em, d_tr))
    }

    /// Per-position label marginals, `T × l`.
    pub fn marginals(&self) -> Vec<f64> {
        let a = self.alphas();
        let b = self.betas();
        let z = self.log_z_from(&a);
        a.iter().zip(&b).map(|(x, y)| (x + y - z).exp()).collect()
    }

    /// Highest-scoring path and its score; ties go to the lowest label index.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let (n, l) = (self.len(), self.l);
        let mut delta: Vec<f64> = (0..l).map(|y| self.tr(self.start(), y) + self.e(0, y)).collect();
        let mut back = vec![0usize; n * l];
        for t in 1..n {
            let mut next = vec![0.0; l];
            for y in 0..l {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for (p, &d) in delta.iter().enumerate() {
                    let v = d + self.tr(p, y);
                    if v > best {
                        best = v;
                        arg = p;
                    }
                }
                next[y] = best + self.e(t, y);
                back[t * l + y] = arg;
            }
            delta = next;
        }
        let (mut best, mut last) = (f64::NEG_INFINITY, 0);
        for (y, &d) in delta.iter().enumerate() {
            let v = d + self.tr(y, self.stop());
            if v > best {
                best = v;
                last = y;
            }
        }
        let mut path = vec![last; n];
        for t in (1..n).rev() {
            path[t - 1] = back[t * l + path[t]];
        }
        (path, best)
    }
}

/// Transition parameter spec with START/STOP boundary states.
pub fn transition_spec(labels: usize) -> ParamSpec {
    ParamSpec::new("crf.transitions", &[labels + 2, labels + 2], ParamGroup::NonCore, Init::Uniform(0.1))
}

/// Pins transitions into START and out of STOP to [`FORBIDDEN`].
pub fn forbid_boundaries(trans: &mut [f64], labels: usize) {
    let w = labels + 2;
    for k in 0..w {
        trans[k * w + labels] = FORBIDDEN;
        trans[(labels + 1) * w + k] = FORBIDDEN;
    }
}

fn check_tensors<'a>(emissions: &'a Tensor, transitions: &'a Tensor) -> Result<Chain<'a>> {
    let [_, l] = emissions.shape() else {
        return Err(Error::dim("crf", "emissions must be a T × L matrix"));
    };
    if transitions.shape() != [l + 2, l + 2] {
        return Err(Error::dim("crf", format!("transitions must be {0} × {0}", l + 2)));
    }
    Chain::new(emissions.values(), transitions.values(), *l)
}

/// Sequence negative log-likelihood of `gold`.
pub fn crf_log_likelihood(emissions: &Tensor, gold: &[usize], transitions: &Tensor) -> Result<f64> {
    check_tensors(emissions, transitions)?.nll(gold)
}

pub fn viterbi_decode(emissions: &Tensor, transitions: &Tensor) -> Result<(Vec<usize>, f64)> {
    Ok(check_tensors(emissions, transitions)?.viterbi())
}

/// NLL of a fixed gold sequence as an op over `[emissions, transitions]`.
pub struct CrfNllOp {
    pub gold: Vec<usize>,
}

impl DifferentiableOp for CrfNllOp {
    fn name(&self) -> &str {
        "crf_nll"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let [em, tr] = inputs else { return Err(Error::dim("crf_nll", "expected [emissions, transitions]")) };
        Tensor::vector(vec![crf_log_likelihood(em, &self.gold, tr)?])
    }

    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let [em, tr] = inputs else { return Err(Error::dim("crf_nll", "expected [emissions, transitions]")) };
        let g = grad_output.values()[0];
        let (_, mut de, mut dt) = check_tensors(em, tr)?.nll_backward(&self.gold)?;
        de.iter_mut().chain(dt.iter_mut()).for_each(|v| *v *= g);
        Ok(vec![Tensor::new(em.shape(), de)?, Tensor::new(tr.shape(), dt)?])
    }
}
