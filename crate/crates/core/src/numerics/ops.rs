//! Dense kernels with hand-written backward passes.
//!
//! The slice-level kernels (`matvec_add`, `outer_add`, ...) are what the
//! model code calls in its hot loops. The tensor-level functions and the
//! [`DifferentiableOp`] implementations wrap them with shape checks so they
//! can be verified in isolation by [`crate::numerics::grad_check`].

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `out[r] += Σ_c w[r, c] · x[c]` for a row-major `w` with `cols` columns.
#[inline]
pub fn matvec_add(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx[c] += Σ_r w[r, c] · dy[r]`.
#[inline]
pub fn matvec_t_add(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(dx.len(), cols);
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g == 0.0 {
            continue;
        }
        for (d, &a) in dx.iter_mut().zip(row) {
            *d += a * g;
        }
    }
}

/// `dw[r, c] += dy[r] · x[c]`.
#[inline]
pub fn outer_add(dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    debug_assert_eq!(x.len(), cols);
    for (&g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if g == 0.0 {
            continue;
        }
        for (d, &a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

#[inline]
pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-sum-exp.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place(u: &mut [f64]) {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in u.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in u.iter_mut() {
        *x /= s;
    }
}

/// Gradient wrt the scores given softmax outputs `p` and upstream `dp`.
pub fn softmax_backward_slice(p: &[f64], dp: &[f64], du: &mut [f64]) {
    let inner = dot(p, dp);
    for ((d, &pi), &gi) in du.iter_mut().zip(p).zip(dp) {
        *d = pi * (gi - inner);
    }
}

/// Valid-mode 1-D convolution over rows of `input` (`l × d`), kernel laid out
/// `j × d × c`. Writes `(l − j + 1) × c` values into `out`.
pub fn conv1d_valid_slice(
    input: &[f64],
    d: usize,
    kernel: &[f64],
    width: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    let c = bias.len();
    let l = input.len() / d;
    let m = l + 1 - width;
    debug_assert_eq!(out.len(), m * c);
    for i in 0..m {
        let o = &mut out[i * c..(i + 1) * c];
        o.copy_from_slice(bias);
        for t in 0..width {
            let row = &input[(i + t) * d..(i + t + 1) * d];
            for (f, &x) in row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let k = &kernel[(t * d + f) * c..(t * d + f + 1) * c];
                for (oo, &kk) in o.iter_mut().zip(k) {
                    *oo += x * kk;
                }
            }
        }
    }
}

/// Backward pass of [`conv1d_valid_slice`]; all gradient buffers accumulate.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_valid_backward_slice(
    input: &[f64],
    d: usize,
    kernel: &[f64],
    width: usize,
    c: usize,
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) {
    let m = grad_out.len() / c;
    for i in 0..m {
        let g = &grad_out[i * c..(i + 1) * c];
        add_assign(grad_bias, g);
        for t in 0..width {
            let row = &input[(i + t) * d..(i + t + 1) * d];
            for (f, &x) in row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let gk = &mut grad_kernel[(t * d + f) * c..(t * d + f + 1) * c];
                for (k, &gg) in gk.iter_mut().zip(g) {
                    *k += x * gg;
                }
            }
        }
    }
    if let Some(gi) = grad_input {
        for i in 0..m {
            let g = &grad_out[i * c..(i + 1) * c];
            for t in 0..width {
                for f in 0..d {
                    let k = &kernel[(t * d + f) * c..(t * d + f + 1) * c];
                    gi[(i + t) * d + f] += dot(k, g);
                }
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a, b)?;
    let mut out = vec![0.0; m * n];
    let (av, bv) = (a.values(), b.values());
    for i in 0..m {
        for p in 0..k {
            let x = av[i * k + p];
            if x == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += x * bv[p * n + j];
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// Gradients of `a × b` wrt `a` and `b`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k, n) = matmul_dims(a, b)?;
    if grad_out.shape() != [m, n] {
        return Err(Error::dim(
            "matmul_backward",
            format!("grad {:?} for output [{m}, {n}]", grad_out.shape()),
        ));
    }
    let (av, bv, g) = (a.values(), b.values(), grad_out.values());
    let mut ga = vec![0.0; m * k];
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let mut s = 0.0;
            for j in 0..n {
                s += g[i * n + j] * bv[p * n + j];
                gb[p * n + j] += av[i * k + p] * g[i * n + j];
            }
            ga[i * k + p] = s;
        }
    }
    Ok((Tensor::matrix(m, k, ga)?, Tensor::matrix(k, n, gb)?))
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        (&[m, k], &[k2, n]) if k == k2 => Ok((m, k, n)),
        (sa, sb) => Err(Error::dim(
            "matmul",
            format!("cannot multiply {sa:?} by {sb:?}"),
        )),
    }
}

pub fn softmax(u: &Tensor) -> Result<Tensor> {
    if u.shape().len() != 1 {
        return Err(Error::dim(
            "softmax",
            format!("expected a vector, got shape {:?}", u.shape()),
        ));
    }
    let mut v = u.values().to_vec();
    softmax_in_place(&mut v);
    Tensor::vector(v)
}

pub fn softmax_backward(p: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if p.shape() != grad_out.shape() {
        return Err(Error::dim("softmax_backward", "shape mismatch"));
    }
    let mut du = vec![0.0; p.len()];
    softmax_backward_slice(p.values(), grad_out.values(), &mut du);
    Tensor::vector(du)
}

fn conv_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (l, d) = match input.shape() {
        &[l, d] => (l, d),
        s => return Err(Error::dim("conv1d_valid", format!("input shape {s:?} is not l×d"))),
    };
    let (j, c) = match kernel.shape() {
        &[j, kd, c] if kd == d => (j, c),
        s => {
            return Err(Error::dim(
                "conv1d_valid",
                format!("kernel shape {s:?} incompatible with input {:?}", input.shape()),
            ))
        }
    };
    if bias.shape() != [c] {
        return Err(Error::dim(
            "conv1d_valid",
            format!("bias shape {:?} for {c} channels", bias.shape()),
        ));
    }
    if l < j {
        return Err(Error::Precondition {
            op: "conv1d_valid",
            detail: format!("input length {l} shorter than kernel width {j}"),
        });
    }
    Ok((l, d, j, c))
}

pub fn conv1d_valid(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (l, d, j, c) = conv_dims(input, kernel, bias)?;
    let m = l - j + 1;
    let mut out = vec![0.0; m * c];
    conv1d_valid_slice(input.values(), d, kernel.values(), j, bias.values(), &mut out);
    Tensor::matrix(m, c, out)
}

/// Returns gradients wrt (input, kernel, bias).
pub fn conv1d_valid_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (l, d, j, c) = conv_dims(input, kernel, bias)?;
    if grad_out.shape() != [l - j + 1, c] {
        return Err(Error::dim("conv1d_valid_backward", "gradient shape mismatch"));
    }
    let mut gi = vec![0.0; l * d];
    let mut gk = vec![0.0; j * d * c];
    let mut gb = vec![0.0; c];
    conv1d_valid_backward_slice(
        input.values(),
        d,
        kernel.values(),
        j,
        c,
        grad_out.values(),
        Some(&mut gi),
        &mut gk,
        &mut gb,
    );
    Ok((
        Tensor::matrix(l, d, gi)?,
        Tensor::new(&[j, d, c], gk)?,
        Tensor::vector(gb)?,
    ))
}

/// An operation with an analytic backward pass, checkable by finite differences.
pub trait DifferentiableOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor>;
    /// Gradients of `Σ w ⊙ output` wrt each input, where `w = grad_output`.
    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>>;
}

pub struct MatMul;

impl DifferentiableOp for MatMul {
    fn name(&self) -> &str {
        "matmul"
    }
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        matmul(&inputs[0], &inputs[1])
    }
    fn backward(&self, inputs: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let (ga, gb) = matmul_backward(&inputs[0], &inputs[1], g)?;
        Ok(vec![ga, gb])
    }
}

pub struct Softmax;

impl DifferentiableOp for Softmax {
    fn name(&self) -> &str {
        "softmax"
    }
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        softmax(&inputs[0])
    }
    fn backward(&self, inputs: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let p = softmax(&inputs[0])?;
        Ok(vec![softmax_backward(&p, g)?])
    }
}

pub struct Conv1dValid;

impl DifferentiableOp for Conv1dValid {
    fn name(&self) -> &str {
        "conv1d_valid"
    }
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        conv1d_valid(&inputs[0], &inputs[1], &inputs[2])
    }
    fn backward(&self, inputs: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let (gi, gk, gb) = conv1d_valid_backward(&inputs[0], &inputs[1], &inputs[2], g)?;
        Ok(vec![gi, gk, gb])
    }
}

pub struct Tanh;

impl DifferentiableOp for Tanh {
    fn name(&self) -> &str {
        "tanh"
    }
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let v = inputs[0].values().iter().map(|x| x.tanh()).collect();
        Tensor::new(inputs[0].shape(), v)
    }
    fn backward(&self, inputs: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let v = inputs[0]
            .values()
            .iter()
            .zip(g.values())
            .map(|(x, gg)| {
                let t = x.tanh();
                gg * (1.0 - t * t)
            })
            .collect();
        Ok(vec![Tensor::new(inputs[0].shape(), v)?])
    }
}

/// Affine map `y = W x + b` with `W: out × in`, `x: in`, `b: out`.
pub struct Linear;

impl DifferentiableOp for Linear {
    fn name(&self) -> &str {
        "linear"
    }
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (w, x, b) = (&inputs[0], &inputs[1], &inputs[2]);
        let (rows, cols) = linear_dims(w, x, b)?;
        let mut y = b.values().to_vec();
        matvec_add(w.values(), cols, x.values(), &mut y);
        debug_assert_eq!(y.len(), rows);
        Tensor::vector(y)
    }
    fn backward(&self, inputs: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let (w, x, b) = (&inputs[0], &inputs[1], &inputs[2]);
        let (rows, cols) = linear_dims(w, x, b)?;
        let mut gw = vec![0.0; rows * cols];
        outer_add(&mut gw, cols, g.values(), x.values());
        let mut gx = vec![0.0; cols];
        matvec_t_add(w.values(), cols, g.values(), &mut gx);
        Ok(vec![
            Tensor::matrix(rows, cols, gw)?,
            Tensor::vector(gx)?,
            g.clone(),
        ])
    }
}

fn linear_dims(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    match (w.shape(), x.shape(), b.shape()) {
        (&[r, c], &[c2], &[r2]) if c == c2 && r == r2 => Ok((r, c)),
        (sw, sx, sb) => Err(Error::dim(
            "linear",
            format!("W {sw:?}, x {sx:?}, b {sb:?} are incompatible"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        assert_eq!(matmul(&Tensor::identity(3), &m).unwrap(), m);
        let z = matmul(&Tensor::zeros(&[2, 3]), &m).unwrap();
        assert_eq!(z.shape(), &[2, 4]);
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.values(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&Tensor::vector(vec![0.0; 3]).unwrap()).unwrap();
        assert!(close(p.values(), &[1.0 / 3.0; 3], 1e-15));
        let p = softmax(&Tensor::vector(vec![1000.0, 0.0]).unwrap()).unwrap();
        assert!(p.is_finite());
        assert!((p.values()[0] - 1.0).abs() < 1e-12 && p.values()[1] < 1e-300);
        let p = softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert!(close(p.values(), &[0.09003, 0.24473, 0.66524], 1e-5));
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(softmax(&Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn conv_output_length() {
        let input = Tensor::zeros(&[5, 2]);
        let out = conv1d_valid(&input, &Tensor::zeros(&[3, 2, 4]), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(out.shape(), &[3, 4]);
        let err = conv1d_valid(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[3, 2, 1]), &Tensor::zeros(&[1]));
        assert!(matches!(err, Err(Error::Precondition { .. })));
    }

    #[test]
    fn conv_summing_kernel() {
        let input = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let out = conv1d_valid(&input, &Tensor::filled(&[1, 2, 1], 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.values(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = Tensor::uniform(&[4, 2], 1.0, &mut rng);
        let kernel = Tensor::uniform(&[2, 2, 3], 1.0, &mut rng);
        let bias = Tensor::uniform(&[3], 1.0, &mut rng);
        let out = conv1d_valid(&input, &kernel, &bias).unwrap();
        for i in 0..3 {
            for o in 0..3 {
                let mut s = bias.get(&[o]);
                for t in 0..2 {
                    for f in 0..2 {
                        s += input.get(&[i + t, f]) * kernel.get(&[t, f, o]);
                    }
                }
                assert!((out.get(&[i, o]) - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn grad_checks_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let b = Tensor::uniform(&[4, 2], 1.0, &mut rng);
        assert!(grad_check(&MatMul, &[a, b], 1e-5).unwrap() < 1e-9);
        let u = Tensor::uniform(&[5], 2.0, &mut rng);
        assert!(grad_check(&Softmax, &[u], 1e-5).unwrap() < 1e-6);
        let x = Tensor::uniform(&[6, 3], 1.0, &mut rng);
        let k = Tensor::uniform(&[3, 3, 2], 1.0, &mut rng);
        let bias = Tensor::uniform(&[2], 1.0, &mut rng);
        assert!(grad_check(&Conv1dValid, &[x, k, bias], 1e-5).unwrap() < 1e-9);
    }

    #[test]
    fn linear_grad_is_exact_and_tanh_derivative_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Tensor::uniform(&[3, 5], 1.0, &mut rng);
        let x = Tensor::uniform(&[5], 1.0, &mut rng);
        let b = Tensor::uniform(&[3], 1.0, &mut rng);
        assert!(grad_check(&Linear, &[w, x, b], 1e-5).unwrap() < 1e-9);
        let zero = Tensor::zeros(&[1]);
        let g = Tanh.backward(&[zero.clone()], &Tensor::filled(&[1], 1.0)).unwrap();
        assert_eq!(g[0].values(), &[1.0]);
        assert!(grad_check(&Tanh, &[zero], 1e-5).unwrap() < 1e-9);
    }

    #[test]
    fn log_sum_exp_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
