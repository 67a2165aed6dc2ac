use crate::error::{Error, Result};
use crate::numerics::{add_assign, matvec_add, matvec_t_add, outer_add, sigmoid, DifferentiableOp, Tensor};

/// Activations of one highway layer `y = g·relu(W_h x + b_h) + (1 − g)·x`,
/// `g = σ(W_g x + b_g)`.
#[derive(Clone, Debug)]
pub struct HighwayForward {
    pub gate: Vec<f64>,
    pub pre: Vec<f64>,
    pub relu: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn highway(x: &[f64], wh: &[f64], bh: &[f64], wg: &[f64], bg: &[f64]) -> HighwayForward {
    let t = x.len();
    let mut pre = bh.to_vec();
    matvec_add(wh, t, x, &mut pre);
    let mut gate = bg.to_vec();
    matvec_add(wg, t, x, &mut gate);
    gate.iter_mut().for_each(|g| *g = sigmoid(*g));
    let relu: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let out = (0..t).map(|i| gate[i] * relu[i] + (1.0 - gate[i]) * x[i]).collect();
    HighwayForward { gate, pre, relu, out }
}

pub struct HighwayGrads<'a> {
    pub x: &'a mut [f64],
    pub wh: &'a mut [f64],
    pub bh: &'a mut [f64],
    pub wg: &'a mut [f64],
    pub bg: &'a mut [f64],
}

#[allow(clippy::too_many_arguments)]
pub fn highway_backward(x: &[f64], fwd: &HighwayForward, wh: &[f64], wg: &[f64], dy: &[f64], g: HighwayGrads<'_>) {
    let t = x.len();
    let mut d_pre = vec![0.0; t];
    let mut d_gate_pre = vec![0.0; t];
    for i in 0..t {
        let gi = fwd.gate[i];
        g.x[i] += dy[i] * (1.0 - gi);
        let dg = dy[i] * (fwd.relu[i] - x[i]);
        d_gate_pre[i] = dg * gi * (1.0 - gi);
        d_pre[i] = if fwd.pre[i] > 0.0 { dy[i] * gi } else { 0.0 };
    }
    outer_add(g.wh, t, &d_pre, x);
    add_assign(g.bh, &d_pre);
    outer_add(g.wg, t, &d_gate_pre, x);
    add_assign(g.bg, &d_gate_pre);
    matvec_t_add(wh, t, &d_pre, g.x);
    matvec_t_add(wg, t, &d_gate_pre, g.x);
}

/// Tensor-level highway layer over inputs `[x, W_h, b_h, W_g, b_g]`.
pub struct HighwayOp;

fn check(inputs: &[Tensor]) -> Result<usize> {
    let err = || Error::dim("highway", "expected [x (t), W_h (t×t), b_h (t), W_g (t×t), b_g (t)]");
    let [x, wh, bh, wg, bg] = inputs else { return Err(err()) };
    let t = x.len();
    if x.shape().len() != 1
        || wh.shape() != [t, t]
        || wg.shape() != [t, t]
        || bh.shape() != [t]
        || bg.shape() != [t]
    {
        return Err(err());
    }
    Ok(t)
}

impl DifferentiableOp for HighwayOp {
    fn name(&self) -> &str {
        "highway"
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        check(inputs)?;
        let v: Vec<&[f64]> = inputs.iter().map(Tensor::values).collect();
        Tensor::vector(highway(v[0], v[1], v[2], v[3], v[4]).out)
    }

    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let t = check(inputs)?;
        let v: Vec<&[f64]> = inputs.iter().map(Tensor::values).collect();
        let fwd = highway(v[0], v[1], v[2], v[3], v[4]);
        let (mut x, mut wh, mut bh, mut wg, mut bg) =
            (vec![0.0; t], vec![0.0; t * t], vec![0.0; t], vec![0.0; t * t], vec![0.0; t]);
        highway_backward(
            v[0],
            &fwd,
            v[1],
            v[3],
            grad_output.values(),
            HighwayGrads {
                x: &mut x,
                wh: &mut wh,
                bh: &mut bh,
                wg: &mut wg,
                bg: &mut bg,
            },
        );
        Ok(vec![
            Tensor::vector(x)?,
            Tensor::matrix(t, t, wh)?,
            Tensor::vector(bh)?,
            Tensor::matrix(t, t, wg)?,
            Tensor::vector(bg)?,
        ])
    }
}
