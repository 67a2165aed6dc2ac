use crate::error::{Error, Result};
use crate::numerics::{
    add_assign, matvec_add, matvec_t_add, outer_add, sigmoid, DifferentiableOp, Gradients, Init,
    ParamGroup, ParamId, ParamSpec, ParamStore, Tensor,
};

/// Weights of one LSTM direction. Gate blocks are stacked `[i, f, g, o]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a> {
    /// `4h × in`
    pub w: &'a [f64],
    /// `4h × h`
    pub u: &'a [f64],
    /// `4h`
    pub b: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct LstmStep {
    pub t: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Runs one direction over `xs` from zero initial state. Steps are stored in
/// processing order.
pub fn lstm_run(xs: &[&[f64]], hidden: usize, p: LstmWeights<'_>, reverse: bool) -> Vec<LstmStep> {
    let n = xs.len();
    let in_dim = xs.first().map_or(0, |x| x.len());
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut steps = Vec::with_capacity(n);
    for k in 0..n {
        let t = if reverse { n - 1 - k } else { k };
        let mut pre = p.b.to_vec();
        matvec_add(p.w, in_dim, xs[t], &mut pre);
        matvec_add(p.u, hidden, &h, &mut pre);
        let mut gates = pre;
        for (q, g) in gates.iter_mut().enumerate() {
            *g = if q / hidden == 2 { g.tanh() } else { sigmoid(*g) };
        }
        let (ig, rest) = gates.split_at(hidden);
        let (fg, rest) = rest.split_at(hidden);
        let (gg, og) = rest.split_at(hidden);
        let c_new: Vec<f64> = (0..hidden).map(|j| fg[j] * c[j] + ig[j] * gg[j]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..hidden).map(|j| og[j] * tanh_c[j]).collect();
        steps.push(LstmStep {
            t,
            h_prev: std::mem::replace(&mut h, h_new.clone()),
            c_prev: std::mem::replace(&mut c, c_new),
            gates,
            tanh_c,
            h: h_new,
        });
    }
    steps
}

pub struct LstmGrads<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

/// Backpropagates `dh[t]` (gradient wrt the output at each position)
/// through one direction, adding input gradients into `dxs`.
pub fn lstm_run_backward(
    xs: &[&[f64]],
    steps: &[LstmStep],
    p: LstmWeights<'_>,
    dh: &[&[f64]],
    g: LstmGrads<'_>,
    dxs: &mut [Vec<f64>],
) {
    let hidden = p.b.len() / 4;
    let in_dim = xs.first().map_or(0, |x| x.len());
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dpre = vec![0.0; 4 * hidden];
    for s in steps.iter().rev() {
        let (ig, rest) = s.gates.split_at(hidden);
        let (fg, rest) = rest.split_at(hidden);
        let (gg, og) = rest.split_at(hidden);
        for j in 0..hidden {
            let dhj = dh[s.t][j] + dh_next[j];
            let tc = s.tanh_c[j];
            let dc = dhj * og[j] * (1.0 - tc * tc) + dc_next[j];
            dpre[j] = dc * gg[j] * ig[j] * (1.0 - ig[j]);
            dpre[hidden + j] = dc * s.c_prev[j] * fg[j] * (1.0 - fg[j]);
            dpre[2 * hidden + j] = dc * ig[j] * (1.0 - gg[j] * gg[j]);
            dpre[3 * hidden + j] = dhj * tc * og[j] * (1.0 - og[j]);
            dc_next[j] = dc * fg[j];
        }
        outer_add(g.w, in_dim, &dpre, xs[s.t]);
        outer_add(g.u, hidden, &dpre, &s.h_prev);
        add_assign(g.b, &dpre);
        matvec_t_add(p.w, in_dim, &dpre, &mut dxs[s.t]);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_add(p.u, hidden, &dpre, &mut dh_next);
    }
}

#[derive(Clone, Copy, Debug)]
struct DirIds {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

/// Single-layer bidirectional LSTM; outputs `[h_fwd ; h_bwd]` per position.
#[derive(Clone, Debug)]
pub struct BiLstm {
    input_dim: usize,
    hidden: usize,
    dirs: [DirIds; 2],
}

#[derive(Clone, Debug)]
pub struct BiLstmForward {
    steps: [Vec<LstmStep>; 2],
    pub outputs: Vec<Vec<f64>>,
}

impl BiLstm {
    pub fn param_specs(prefix: &str, input_dim: usize, hidden: usize) -> Vec<ParamSpec> {
        let r = 1.0 / (hidden as f64).sqrt();
        ["fwd", "bwd"]
            .iter()
            .flat_map(|d| {
                [
                    ParamSpec::new(format!("{prefix}.{d}.W"), &[4 * hidden, input_dim], ParamGroup::NonCore, Init::Uniform(r)),
                    ParamSpec::new(format!("{prefix}.{d}.U"), &[4 * hidden, hidden], ParamGroup::NonCore, Init::Uniform(r)),
                    ParamSpec::new(format!("{prefix}.{d}.b"), &[4 * hidden], ParamGroup::NonCore, Init::Zeros),
                ]
            })
            .collect()
    }

    /// Binds to parameters created from [`BiLstm::param_specs`], in order.
    pub fn from_ids(input_dim: usize, hidden: usize, ids: &[ParamId]) -> Self {
        let d = |k: usize| DirIds {
            w: ids[3 * k],
            u: ids[3 * k + 1],
            b: ids[3 * k + 2],
        };
        Self {
            input_dim,
            hidden,
            dirs: [d(0), d(1)],
        }
    }

    /// Sets each forget-gate bias to one.
    pub fn init_forget_bias(&self, store: &mut ParamStore) {
        for d in &self.dirs {
            let b = store.get_mut(d.b).tensor.values_mut();
            b[self.hidden..2 * self.hidden].iter_mut().for_each(|v| *v = 1.0);
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    fn weights<'a>(&self, store: &'a ParamStore, k: usize) -> LstmWeights<'a> {
        LstmWeights {
            w: store.value(self.dirs[k].w),
            u: store.value(self.dirs[k].u),
            b: store.value(self.dirs[k].b),
        }
    }

    pub fn forward(&self, store: &ParamStore, xs: &[&[f64]]) -> Result<BiLstmForward> {
        if xs.is_empty() {
            return Err(Error::Input("BiLSTM over an empty sequence".into()));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.input_dim) {
            return Err(Error::dim(
                "bilstm_forward",
                format!("input has length {}, expected {}", x.len(), self.input_dim),
            ));
        }
        let f = lstm_run(xs, self.hidden, self.weights(store, 0), false);
        let b = lstm_run(xs, self.hidden, self.weights(store, 1), true);
        let n = xs.len();
        let mut outputs = vec![Vec::with_capacity(2 * self.hidden); n];
        for s in &f {
            outputs[s.t].extend_from_slice(&s.h);
        }
        for s in &b {
            outputs[s.t].extend_from_slice(&s.h);
        }
        Ok(BiLstmForward { steps: [f, b], outputs })
    }

    /// Accumulates parameter gradients and returns gradients wrt the inputs.
    pub fn backward(
        &self,
        store: &ParamStore,
        xs: &[&[f64]],
        fwd: &BiLstmForward,
        d_out: &[Vec<f64>],
        grads: &mut Gradients,
    ) -> Vec<Vec<f64>> {
        let h = self.hidden;
        let mut dxs = vec![vec![0.0; self.input_dim]; xs.len()];
        for k in 0..2 {
            let dh: Vec<&[f64]> = d_out.iter().map(|d| &d[k * h..(k + 1) * h]).collect();
            let ids = self.dirs[k];
            let (mut gw, mut gu, mut gb) = (grads.take(ids.w), grads.take(ids.u), grads.take(ids.b));
            lstm_run_backward(
                xs,
                &fwd.steps[k],
                self.weights(store, k),
                &dh,
                LstmGrads {
                    w: &mut gw,
                    u: &mut gu,
                    b: &mut gb,
                },
                &mut dxs,
            );
            grads.restore(ids.w, gw);
            grads.restore(ids.u, gu);
            grads.restore(ids.b, gb);
        }
        dxs
    }
}

/// Tensor-level BiLSTM over inputs `[X (T×in), W_f, U_f, b_f, W_b, U_b, b_b]`,
/// producing `T × 2h`.
pub struct BiLstmOp;

fn split_inputs(inputs: &[Tensor]) -> Result<(usize, usize, usize)> {
    let err = || Error::dim("bilstm", "expected [X, W_f, U_f, b_f, W_b, U_b, b_b] with consistent shapes");
    if inputs.len() != 7 || inputs[0].shape().len() != 2 {
        return Err(err());
    }
    let (n, in_dim) = (inputs[0].shape()[0], inputs[0].shape()[1]);
    let h = inputs[3].len() / 4;
    for k in 0..2 {
        let o = 1 + 3 * k;
        if inputs[o].shape() != [4 * h, in_dim] || inputs[o + 1].shape() != [4 * h, h] || inputs[o + 2].shape() != [4 * h] {
            return Err(err());
        }
    }
    if n == 0 || h == 0 {
        return Err(err());
    }
    Ok((n, in_dim, h))
}

fn op_weights(inputs: &[Tensor], k: usize) -> LstmWeights<'_> {
    let o = 1 + 3 * k;
    LstmWeights {
        w: inputs[o].values(),
        u: inputs[o + 1].values(),
        b: inputs[o + 2].values(),
    }
}

impl DifferentiableOp for BiLstmOp {
    fn name(&self) -> &str {
        "bilstm"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (n, in_dim, h) = split_inputs(inputs)?;
        let xs: Vec<&[f64]> = inputs[0].values().chunks(in_dim).collect();
        let mut out = vec![0.0; n * 2 * h];
        for k in 0..2 {
            for s in lstm_run(&xs, h, op_weights(inputs, k), k == 1) {
                out[s.t * 2 * h + k * h..s.t * 2 * h + (k + 1) * h].copy_from_slice(&s.h);
            }
        }
        Tensor::matrix(n, 2 * h, out)
    }

    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let (n, in_dim, h) = split_inputs(inputs)?;
        let xs: Vec<&[f64]> = inputs[0].values().chunks(in_dim).collect();
        let mut dxs = vec![vec![0.0; in_dim]; n];
        let mut out = vec![Tensor::zeros(&[n, in_dim])];
        for k in 0..2 {
            let p = op_weights(inputs, k);
            let steps = lstm_run(&xs, h, p, k == 1);
            let dh: Vec<&[f64]> = grad_output
                .values()
                .chunks(2 * h)
                .map(|r| &r[k * h..(k + 1) * h])
                .collect();
            let (mut gw, mut gu, mut gb) = (vec![0.0; p.w.len()], vec![0.0; p.u.len()], vec![0.0; p.b.len()]);
            lstm_run_backward(&xs, &steps, p, &dh, LstmGrads { w: &mut gw, u: &mut gu, b: &mut gb }, &mut dxs);
            out.push(Tensor::matrix(4 * h, in_dim, gw)?);
            out.push(Tensor::matrix(4 * h, h, gu)?);
            out.push(Tensor::vector(gb)?);
        }
        out[0] = Tensor::matrix(n, in_dim, dxs.concat())?;
        Ok(out)
    }
}
