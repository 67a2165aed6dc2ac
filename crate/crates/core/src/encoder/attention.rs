//! Pooling over character n-gram feature maps.
//!
//! Three poolers share one shape contract: `m` n-gram vectors of width `c`
//! go in, one vector of width `c` comes out.
//!
//! - [`attend`]: additive attention, optionally position-aware. The score of
//!   n-gram `i` is `vᵀ tanh(W (x_i + p_i) + b)`, where `p_i` is a row of the
//!   order's position table. The pooled vector is `Σ α_i x_i`.
//! - [`max_pool`]: elementwise maximum, subgradient to the lowest argmax.
//! - [`hier_attend`]: a second attention over the per-order pooled vectors
//!   whose output is the concatenation of the weighted vectors.

use crate::error::{Error, Result};
use crate::numerics::{
    add_assign, dot, matvec_add, matvec_t_add, outer_add, softmax_backward_slice, softmax_in_place,
    Tensor,
};

/// Borrowed attention parameters for one n-gram order: `w` is `a × c`.
#[derive(Clone, Copy)]
pub struct AttnParams<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub v: &'a [f64],
}

impl AttnParams<'_> {
    fn dim(&self) -> usize {
        self.b.len()
    }
}

/// Rows of a position table used for each n-gram, `table` being `rows × c`.
#[derive(Clone, Copy)]
pub struct Positions<'a> {
    pub table: &'a [f64],
    pub rows: &'a [usize],
}

#[derive(Clone, Debug)]
pub struct AttnForward {
    /// `x_i + p_i`, `m × c`.
    pub xp: Vec<f64>,
    /// `tanh(W (x_i + p_i) + b)`, `m × a`.
    pub t: Vec<f64>,
    pub alphas: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn attend(x: &[f64], c: usize, pos: Option<Positions<'_>>, p: AttnParams<'_>) -> AttnForward {
    let m = x.len() / c;
    let a = p.dim();
    let mut xp = x.to_vec();
    if let Some(pos) = pos {
        for (i, &r) in pos.rows.iter().enumerate() {
            add_assign(&mut xp[i * c..(i + 1) * c], &pos.table[r * c..(r + 1) * c]);
        }
    }
    let mut t = vec![0.0; m * a];
    let mut u = vec![0.0; m];
    for i in 0..m {
        let ti = &mut t[i * a..(i + 1) * a];
        ti.copy_from_slice(p.b);
        matvec_add(p.w, c, &xp[i * c..(i + 1) * c], ti);
        ti.iter_mut().for_each(|v| *v = v.tanh());
        u[i] = dot(p.v, ti);
    }
    softmax_in_place(&mut u);
    let alphas = u;
    let mut z = vec![0.0; c];
    for (i, &al) in alphas.iter().enumerate() {
        for (zz, &xx) in z.iter_mut().zip(&x[i * c..(i + 1) * c]) {
            *zz += al * xx;
        }
    }
    AttnForward { xp, t, alphas, z }
}

/// Gradient sinks for [`attend_backward`]; all accumulate.
pub struct AttnGrads<'a> {
    pub x: &'a mut [f64],
    pub w: &'a mut [f64],
    pub b: &'a mut [f64],
    pub v: &'a mut [f64],
    pub table: Option<&'a mut [f64]>,
}

pub fn attend_backward(
    x: &[f64],
    c: usize,
    fwd: &AttnForward,
    rows: Option<&[usize]>,
    p: AttnParams<'_>,
    dz: &[f64],
    g: AttnGrads<'_>,
) {
    let m = fwd.alphas.len();
    let a = p.dim();
    let AttnGrads {
        x: gx,
        w: gw,
        b: gb,
        v: gv,
        table: mut gtable,
    } = g;
    let mut dalpha = vec![0.0; m];
    for i in 0..m {
        let xi = &x[i * c..(i + 1) * c];
        dalpha[i] = dot(dz, xi);
        let al = fwd.alphas[i];
        for (gg, &d) in gx[i * c..(i + 1) * c].iter_mut().zip(dz) {
            *gg += al * d;
        }
    }
    let mut du = vec![0.0; m];
    softmax_backward_slice(&fwd.alphas, &dalpha, &mut du);
    let mut dpre = vec![0.0; a];
    let mut dxp = vec![0.0; c];
    for i in 0..m {
        if du[i] == 0.0 {
            continue;
        }
        let ti = &fwd.t[i * a..(i + 1) * a];
        for k in 0..a {
            gv[k] += du[i] * ti[k];
            dpre[k] = du[i] * p.v[k] * (1.0 - ti[k] * ti[k]);
        }
        add_assign(gb, &dpre);
        outer_add(gw, c, &dpre, &fwd.xp[i * c..(i + 1) * c]);
        dxp.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_add(p.w, c, &dpre, &mut dxp);
        add_assign(&mut gx[i * c..(i + 1) * c], &dxp);
        if let (Some(gt), Some(rows)) = (gtable.as_deref_mut(), rows) {
            let r = rows[i];
            add_assign(&mut gt[r * c..(r + 1) * c], &dxp);
        }
    }
}

/// Elementwise max over `m` rows of width `c`; returns `(z, argmax)`.
/// Ties go to the lowest row index.
pub fn max_pool(x: &[f64], c: usize) -> (Vec<f64>, Vec<usize>) {
    let m = x.len() / c;
    let mut z = x[..c].to_vec();
    let mut arg = vec![0; c];
    for i in 1..m {
        for o in 0..c {
            let v = x[i * c + o];
            if v > z[o] {
                z[o] = v;
                arg[o] = i;
            }
        }
    }
    (z, arg)
}

pub fn max_pool_backward(argmax: &[usize], c: usize, dz: &[f64], gx: &mut [f64]) {
    for (o, (&i, &d)) in argmax.iter().zip(dz).enumerate() {
        gx[i * c + o] += d;
    }
}

/// Borrowed hierarchical attention parameters: one `a × c_j` projection per
/// order plus a shared bias and score vector.
pub struct HierParams<'a> {
    pub w: Vec<&'a [f64]>,
    pub b: &'a [f64],
    pub v: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct HierForward {
    pub t: Vec<Vec<f64>>,
    pub betas: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn hier_attend(zs: &[&[f64]], p: &HierParams<'_>) -> HierForward {
    let a = p.b.len();
    let mut t = Vec::with_capacity(zs.len());
    let mut u = Vec::with_capacity(zs.len());
    for (z, w) in zs.iter().zip(&p.w) {
        let mut tj = p.b.to_vec();
        matvec_add(w, z.len(), z, &mut tj);
        tj.iter_mut().for_each(|v| *v = v.tanh());
        debug_assert_eq!(tj.len(), a);
        u.push(dot(p.v, &tj));
        t.push(tj);
    }
    softmax_in_place(&mut u);
    let betas = u;
    let out = zs
        .iter()
        .zip(&betas)
        .flat_map(|(z, &bt)| z.iter().map(move |v| bt * v))
        .collect();
    HierForward { t, betas, out }
}

pub struct HierGrads<'a> {
    pub z: Vec<&'a mut [f64]>,
    pub w: Vec<&'a mut [f64]>,
    pub b: &'a mut [f64],
    pub v: &'a mut [f64],
}

pub fn hier_attend_backward(
    zs: &[&[f64]],
    p: &HierParams<'_>,
    fwd: &HierForward,
    dout: &[f64],
    g: HierGrads<'_>,
) {
    let n = zs.len();
    let a = p.b.len();
    let HierGrads {
        z: mut gz,
        w: mut gw,
        b: gb,
        v: gv,
    } = g;
    let mut dbeta = vec![0.0; n];
    let mut off = 0;
    for j in 0..n {
        let c = zs[j].len();
        let seg = &dout[off..off + c];
        dbeta[j] = dot(seg, zs[j]);
        for (gg, &d) in gz[j].iter_mut().zip(seg) {
            *gg += fwd.betas[j] * d;
        }
        off += c;
    }
    let mut du = vec![0.0; n];
    softmax_backward_slice(&fwd.betas, &dbeta, &mut du);
    let mut dpre = vec![0.0; a];
    for j in 0..n {
        let tj = &fwd.t[j];
        for k in 0..a {
            gv[k] += du[j] * tj[k];
            dpre[k] = du[j] * p.v[k] * (1.0 - tj[k] * tj[k]);
        }
        add_assign(gb, &dpre);
        let c = zs[j].len();
        outer_add(gw[j], c, &dpre, zs[j]);
        matvec_t_add(p.w[j], c, &dpre, gz[j]);
    }
}

/// Position-aware attention over the rows of `x` (`m × c`).
///
/// `table` is the order's position table (`rows × c`); n-gram `i` uses row
/// `i`. Passing `None` drops the position term. `w_x` is `a × c`.
pub fn position_aware_attention(
    x: &Tensor,
    table: Option<&Tensor>,
    w_x: &Tensor,
    b_x: &Tensor,
    v: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (m, c) = attention_dims(x, table, w_x, b_x, v)?;
    let rows: Vec<usize> = (0..m).collect();
    let pos = table.map(|t| Positions {
        table: t.values(),
        rows: &rows,
    });
    let fwd = attend(
        x.values(),
        c,
        pos,
        AttnParams {
            w: w_x.values(),
            b: b_x.values(),
            v: v.values(),
        },
    );
    Ok((Tensor::vector(fwd.z)?, Tensor::vector(fwd.alphas)?))
}

/// Gradients of `Σ dz ⊙ z` wrt `(x, table, w_x, b_x, v)`; the table gradient
/// is `None` when no table was given.
pub fn position_aware_attention_backward(
    x: &Tensor,
    table: Option<&Tensor>,
    w_x: &Tensor,
    b_x: &Tensor,
    v: &Tensor,
    dz: &Tensor,
) -> Result<(Tensor, Option<Tensor>, Tensor, Tensor, Tensor)> {
    let (m, c) = attention_dims(x, table, w_x, b_x, v)?;
    let rows: Vec<usize> = (0..m).collect();
    let params = AttnParams {
        w: w_x.values(),
        b: b_x.values(),
        v: v.values(),
    };
    let pos = table.map(|t| Positions {
        table: t.values(),
        rows: &rows,
    });
    let fwd = attend(x.values(), c, pos, params);
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w_x.len()];
    let mut gb = vec![0.0; b_x.len()];
    let mut gv = vec![0.0; v.len()];
    let mut gt = table.map(|t| vec![0.0; t.len()]);
    attend_backward(
        x.values(),
        c,
        &fwd,
        table.map(|_| rows.as_slice()),
        params,
        dz.values(),
        AttnGrads {
            x: &mut gx,
            w: &mut gw,
            b: &mut gb,
            v: &mut gv,
            table: gt.as_deref_mut(),
        },
    );
    let gt = match (gt, table) {
        (Some(g), Some(t)) => Some(Tensor::new(t.shape(), g)?),
        _ => None,
    };
    Ok((
        Tensor::new(x.shape(), gx)?,
        gt,
        Tensor::new(w_x.shape(), gw)?,
        Tensor::new(b_x.shape(), gb)?,
        Tensor::new(v.shape(), gv)?,
    ))
}

fn attention_dims(
    x: &Tensor,
    table: Option<&Tensor>,
    w_x: &Tensor,
    b_x: &Tensor,
    v: &Tensor,
) -> Result<(usize, usize)> {
    let (m, c) = match x.shape() {
        &[m, c] => (m, c),
        s => return Err(Error::dim("position_aware_attention", format!("x shape {s:?} is not m×c"))),
    };
    let a = b_x.len();
    if w_x.shape() != [a, c] || v.shape() != [a] {
        return Err(Error::dim(
            "position_aware_attention",
            format!(
                "W_x {:?}, b_x {:?}, v {:?} incompatible with n-gram width {c}",
                w_x.shape(),
                b_x.shape(),
                v.shape()
            ),
        ));
    }
    if let Some(t) = table {
        match t.shape() {
            &[rows, tc] if tc == c && m <= rows => {}
            s => {
                return Err(Error::dim(
                    "position_aware_attention",
                    format!("{m} n-grams of width {c} need a position table with at least {m} rows of width {c}, got {s:?}"),
                ))
            }
        }
    }
    Ok((m, c))
}

/// Hierarchical attention over per-order vectors; returns `(output, betas)`.
pub fn hierarchical_attention(
    zs: &[Tensor],
    w_h: &[Tensor],
    b_h: &Tensor,
    v_h: &Tensor,
) -> Result<(Tensor, Tensor)> {
    hier_dims(zs, w_h, b_h, v_h)?;
    let zr: Vec<&[f64]> = zs.iter().map(Tensor::values).collect();
    let p = HierParams {
        w: w_h.iter().map(Tensor::values).collect(),
        b: b_h.values(),
        v: v_h.values(),
    };
    let fwd = hier_attend(&zr, &p);
    Ok((Tensor::vector(fwd.out)?, Tensor::vector(fwd.betas)?))
}

/// Gradients wrt `(zs, w_h, b_h, v_h)`.
pub fn hierarchical_attention_backward(
    zs: &[Tensor],
    w_h: &[Tensor],
    b_h: &Tensor,
    v_h: &Tensor,
    dout: &Tensor,
) -> Result<(Vec<Tensor>, Vec<Tensor>, Tensor, Tensor)> {
    hier_dims(zs, w_h, b_h, v_h)?;
    let zr: Vec<&[f64]> = zs.iter().map(Tensor::values).collect();
    let p = HierParams {
        w: w_h.iter().map(Tensor::values).collect(),
        b: b_h.values(),
        v: v_h.values(),
    };
    let fwd = hier_attend(&zr, &p);
    let mut gz: Vec<Vec<f64>> = zs.iter().map(|z| vec![0.0; z.len()]).collect();
    let mut gw: Vec<Vec<f64>> = w_h.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut gb = vec![0.0; b_h.len()];
    let mut gv = vec![0.0; v_h.len()];
    hier_attend_backward(
        &zr,
        &p,
        &fwd,
        dout.values(),
        HierGrads {
            z: gz.iter_mut().map(Vec::as_mut_slice).collect(),
            w: gw.iter_mut().map(Vec::as_mut_slice).collect(),
            b: &mut gb,
            v: &mut gv,
        },
    );
    let gz = gz.into_iter().map(Tensor::vector).collect::<Result<Vec<_>>>()?;
    let gw = gw
        .into_iter()
        .zip(w_h)
        .map(|(g, w)| Tensor::new(w.shape(), g))
        .collect::<Result<Vec<_>>>()?;
    Ok((gz, gw, Tensor::vector(gb)?, Tensor::vector(gv)?))
}

fn hier_dims(zs: &[Tensor], w_h: &[Tensor], b_h: &Tensor, v_h: &Tensor) -> Result<()> {
    if zs.is_empty() || zs.len() != w_h.len() {
        return Err(Error::dim(
            "hierarchical_attention",
            format!("{} order vectors with {} projections", zs.len(), w_h.len()),
        ));
    }
    let a = b_h.len();
    if v_h.len() != a {
        return Err(Error::dim("hierarchical_attention", "v_h and b_h lengths differ"));
    }
    for (z, w) in zs.iter().zip(w_h) {
        if z.shape().len() != 1 || w.shape() != [a, z.len()] {
            return Err(Error::dim(
                "hierarchical_attention",
                format!("z {:?} incompatible with W_h {:?}", z.shape(), w.shape()),
            ));
        }
    }
    Ok(())
}

/// Tensor-level max-pool over the rows of `x`.
pub fn maxpool_downsample(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let c = match x.shape() {
        &[_, c] => c,
        s => return Err(Error::dim("maxpool_downsample", format!("x shape {s:?} is not m×c"))),
    };
    let (z, arg) = max_pool(x.values(), c);
    Ok((Tensor::vector(z)?, arg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, FnOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn single_ngram_gets_all_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let table = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let w = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let b = Tensor::uniform(&[3], 1.0, &mut rng);
        let v = Tensor::uniform(&[3], 1.0, &mut rng);
        let (z, al) = position_aware_attention(&x, Some(&table), &w, &b, &v).unwrap();
        assert_eq!(al.values(), &[1.0]);
        assert_eq!(z.values(), x.values());
    }

    #[test]
    fn constant_scores_give_mean() {
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
        let (z, al) = position_aware_attention(
            &x,
            Some(&Tensor::zeros(&[4, 2])),
            &Tensor::zeros(&[2, 2]),
            &Tensor::zeros(&[2]),
            &t(&[2], &[0.3, -0.7]),
        )
        .unwrap();
        for a in al.values() {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((z.values()[0] - 3.0).abs() < 1e-14);
        assert!((z.values()[1] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn hand_evaluated_two_ngrams() {
        // c = 2, m = 2, a = 1
        let x = t(&[2, 2], &[1.0, 0.0, 0.0, 2.0]);
        let table = t(&[3, 2], &[0.5, 0.0, 0.0, 0.5, 9.0, 9.0]);
        let w = t(&[1, 2], &[1.0, 1.0]);
        let b = t(&[1], &[0.1]);
        let v = t(&[1], &[2.0]);
        let (z, al) = position_aware_attention(&x, Some(&table), &w, &b, &v).unwrap();
        // u_1 = 2·tanh(1 + 0.5 + 0.1), u_2 = 2·tanh(2 + 0.5 + 0.1)
        let u1 = 2.0 * 1.6f64.tanh();
        let u2 = 2.0 * 2.6f64.tanh();
        let a1 = u1.exp() / (u1.exp() + u2.exp());
        assert!((al.values()[0] - a1).abs() < 1e-15);
        assert!((z.values()[0] - a1 * 1.0).abs() < 1e-15);
        assert!((z.values()[1] - (1.0 - a1) * 2.0).abs() < 1e-15);

        // without positions the scores differ: 2·tanh(1.1) vs 2·tanh(2.1)
        let (z, al) = position_aware_attention(&x, None, &w, &b, &v).unwrap();
        let (u1, u2) = (2.0 * 1.1f64.tanh(), 2.0 * 2.1f64.tanh());
        let a1 = u1.exp() / (u1.exp() + u2.exp());
        assert!((al.values()[0] - a1).abs() < 1e-15);
        assert!((z.values()[1] - (1.0 - a1) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn too_many_ngrams_for_table() {
        let r = position_aware_attention(
            &Tensor::zeros(&[4, 2]),
            Some(&Tensor::zeros(&[3, 2])),
            &Tensor::zeros(&[1, 2]),
            &Tensor::zeros(&[1]),
            &Tensor::zeros(&[1]),
        );
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn hierarchical_single_order_is_identity() {
        let z = t(&[3], &[0.2, -1.0, 4.0]);
        let (out, betas) = hierarchical_attention(
            &[z.clone()],
            &[t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])],
            &Tensor::zeros(&[2]),
            &t(&[2], &[1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(betas.values(), &[1.0]);
        assert_eq!(out.values(), z.values());
    }

    #[test]
    fn hierarchical_output_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cs = [32, 32, 64];
        let zs: Vec<Tensor> = cs.iter().map(|&c| Tensor::uniform(&[c], 1.0, &mut rng)).collect();
        let ws: Vec<Tensor> = cs.iter().map(|&c| Tensor::uniform(&[8, c], 0.3, &mut rng)).collect();
        let (out, _) = hierarchical_attention(&zs, &ws, &Tensor::zeros(&[8]), &Tensor::filled(&[8], 0.1)).unwrap();
        assert_eq!(out.len(), 128);
    }

    #[test]
    fn hierarchical_hand_case() {
        // n = 2, a = 1, c = (1, 2)
        let zs = [t(&[1], &[1.0]), t(&[2], &[0.5, -1.0])];
        let ws = [t(&[1, 1], &[2.0]), t(&[1, 2], &[1.0, 1.0])];
        let b = t(&[1], &[0.0]);
        let v = t(&[1], &[1.0]);
        let (out, betas) = hierarchical_attention(&zs, &ws, &b, &v).unwrap();
        let (u1, u2) = (2.0f64.tanh(), (-0.5f64).tanh());
        let b1 = u1.exp() / (u1.exp() + u2.exp());
        assert!((betas.values()[0] - b1).abs() < 1e-15);
        let want = [b1, (1.0 - b1) * 0.5, -(1.0 - b1)];
        for (o, w) in out.values().iter().zip(want) {
            assert!((o - w).abs() < 1e-15);
        }
    }

    #[test]
    fn maxpool_cases() {
        let (z, _) = maxpool_downsample(&t(&[1, 2], &[4.0, -1.0])).unwrap();
        assert_eq!(z.values(), &[4.0, -1.0]);
        let (z, arg) = maxpool_downsample(&t(&[2, 2], &[1.0, 5.0, 3.0, 2.0])).unwrap();
        assert_eq!(z.values(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
        let (z, arg) = maxpool_downsample(&t(&[3, 2], &[7.0, 7.0, 7.0, 7.0, 7.0, 7.0])).unwrap();
        assert_eq!(z.values(), &[7.0, 7.0]);
        assert_eq!(arg, vec![0, 0]);
        let mut gx = vec![0.0; 6];
        max_pool_backward(&arg, 2, &[1.0, 2.0], &mut gx);
        assert_eq!(gx, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![
                Tensor::uniform(&[4, 3], 1.0, &mut rng),
                Tensor::uniform(&[6, 3], 1.0, &mut rng),
                Tensor::uniform(&[5, 3], 1.0, &mut rng),
                Tensor::uniform(&[5], 1.0, &mut rng),
                Tensor::uniform(&[5], 1.0, &mut rng),
            ];
            let weights = Tensor::uniform(&[3], 1.0, &mut rng);
            let w2 = weights.clone();
            let op = FnOp::new(
                "position_aware_attention",
                move |x| {
                    let (z, _) = position_aware_attention(&x[0], Some(&x[1]), &x[2], &x[3], &x[4])?;
                    Tensor::vector(vec![dot(z.values(), weights.values())])
                },
                move |x, g| {
                    let dz = Tensor::vector(w2.values().iter().map(|w| w * g.values()[0]).collect())?;
                    let (gx, gt, gw, gb, gv) =
                        position_aware_attention_backward(&x[0], Some(&x[1]), &x[2], &x[3], &x[4], &dz)?;
                    Ok(vec![gx, gt.unwrap(), gw, gb, gv])
                },
            );
            let err = grad_check(&op, &inputs, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
