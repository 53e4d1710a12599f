//! Forward kernels and their analytic reverse-mode gradients.
//!
//! All kernels work on row-major matrices (`rows x cols`). Each output row is
//! computed independently with a fixed accumulation order, so gathering a
//! subset of rows and running the kernel on them yields bit-identical values
//! to running it on the whole matrix. Expert dispatch relies on this.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(msg()))
    }
}

/// `y = x W + b` with `x: n x in`, `W: in x out`, `b: out`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d_in) = (x.rows(), x.cols());
    require(w.shape().len() == 2 && w.shape()[0] == d_in, || {
        format!("affine: x {:?} vs W {:?}", x.shape(), w.shape())
    })?;
    let d_out = w.shape()[1];
    require(b.numel() == d_out, || {
        format!("affine: bias {:?} vs out {d_out}", b.shape())
    })?;
    let wd = w.data();
    let mut y = Vec::with_capacity(n * d_out);
    for r in 0..n {
        let mut acc = b.data().to_vec();
        for (i, &xi) in x.row(r).iter().enumerate() {
            let wrow = &wd[i * d_out..(i + 1) * d_out];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += xi * wv;
            }
        }
        y.extend_from_slice(&acc);
    }
    Tensor::matrix(n, d_out, y)
}

pub struct AffineGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<AffineGrads> {
    let (n, d_in) = (x.rows(), x.cols());
    let d_out = w.shape()[1];
    require(dy.rows() == n && dy.cols() == d_out, || {
        format!("affine_backward: dy {:?}", dy.shape())
    })?;
    let wd = w.data();
    let mut dx = Tensor::zeros(&[n, d_in]);
    let mut dw = Tensor::zeros(&[d_in, d_out]);
    let mut db = Tensor::zeros(&[d_out]);
    for r in 0..n {
        let g = dy.row(r);
        for (a, &gv) in db.data_mut().iter_mut().zip(g) {
            *a += gv;
        }
        let xr = x.row(r);
        let dxr = dx.row_mut(r);
        for i in 0..d_in {
            let wrow = &wd[i * d_out..(i + 1) * d_out];
            dxr[i] = wrow.iter().zip(g).map(|(a, b)| a * b).sum();
        }
        let dwd = dw.data_mut();
        for (i, &xi) in xr.iter().enumerate() {
            let dwrow = &mut dwd[i * d_out..(i + 1) * d_out];
            for (a, &gv) in dwrow.iter_mut().zip(g) {
                *a += xi * gv;
            }
        }
    }
    Ok(AffineGrads { dx, dw, db })
}

/// `y = a b^T` with `a: n x k`, `b: m x k`. Used for the tied output head.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require(a.cols() == b.cols(), || {
        format!("matmul_nt: {:?} vs {:?}", a.shape(), b.shape())
    })?;
    let (n, m) = (a.rows(), b.rows());
    let mut y = Vec::with_capacity(n * m);
    for r in 0..n {
        let ar = a.row(r);
        for c in 0..m {
            y.push(ar.iter().zip(b.row(c)).map(|(x, z)| x * z).sum());
        }
    }
    Tensor::matrix(n, m, y)
}

/// Gradients of [`matmul_nt`]: `(da, db)`.
pub fn matmul_nt_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, m, k) = (a.rows(), b.rows(), a.cols());
    require(dy.rows() == n && dy.cols() == m, || {
        format!("matmul_nt_backward: dy {:?}", dy.shape())
    })?;
    let mut da = Tensor::zeros(&[n, k]);
    let mut db = Tensor::zeros(&[m, k]);
    for r in 0..n {
        let g = dy.row(r);
        let ar = a.row(r).to_vec();
        let dar = da.row_mut(r);
        for (c, &gv) in g.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            let br = b.row(c);
            for (x, &bv) in dar.iter_mut().zip(br) {
                *x += gv * bv;
            }
            let dbr = db.row_mut(c);
            for (x, &av) in dbr.iter_mut().zip(&ar) {
                *x += gv * av;
            }
        }
    }
    Ok((da, db))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    require(x.shape() == dy.shape(), || {
        format!("gelu_backward: {:?} vs {:?}", x.shape(), dy.shape())
    })?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let u = GELU_C * (v + GELU_A * v * v * v);
            let t = u.tanh();
            let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
            g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub struct LayerNormCache {
    pub xhat: Tensor,
    pub rstd: Vec<f64>,
}

/// Layer norm over the last axis, biased variance, `eps = 1e-5`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let (n, c) = (x.rows(), x.cols());
    require(gamma.numel() == c && beta.numel() == c, || {
        format!("layer_norm: x {:?}, gamma {:?}", x.shape(), gamma.shape())
    })?;
    let mut y = Tensor::zeros(&[n, c]);
    let mut xhat = Tensor::zeros(&[n, c]);
    let mut rstd = Vec::with_capacity(n);
    for r in 0..n {
        let xr = x.row(r);
        let mean = xr.iter().sum::<f64>() / c as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(xr) {
            *h = (v - mean) * rs;
        }
        let xh = xhat.row(r).to_vec();
        let yr = y.row_mut(r);
        for i in 0..c {
            yr[i] = xh[i] * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok((y, LayerNormCache { xhat, rstd }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gamma: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c) = (cache.xhat.rows(), cache.xhat.cols());
    require(dy.rows() == n && dy.cols() == c, || {
        format!("layer_norm_backward: dy {:?}", dy.shape())
    })?;
    let mut dx = Tensor::zeros(&[n, c]);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let g = gamma.data();
    for r in 0..n {
        let xh = cache.xhat.row(r);
        let dyr = dy.row(r);
        for i in 0..c {
            dgamma.data_mut()[i] += dyr[i] * xh[i];
            dbeta.data_mut()[i] += dyr[i];
        }
        let dxh: Vec<f64> = (0..c).map(|i| dyr[i] * g[i]).collect();
        let mean_dxh = dxh.iter().sum::<f64>() / c as f64;
        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
        let rs = cache.rstd[r];
        let dxr = dx.row_mut(r);
        for i in 0..c {
            dxr[i] = rs * (dxh[i] - mean_dxh - xh[i] * mean_dxh_xh);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for r in 0..x.rows() {
        softmax_in_place(y.row_mut(r));
    }
    y
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    require(y.shape() == dy.shape(), || {
        format!("softmax_backward: {:?} vs {:?}", y.shape(), dy.shape())
    })?;
    let mut dx = Tensor::zeros(y.shape());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), dy.row(r));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (d, (&yv, &gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
            *d = yv * (gv - dot);
        }
    }
    Ok(dx)
}

/// Attention probabilities per head, each `n_q x n_k`.
pub struct AttentionCache {
    pub probs: Vec<Tensor>,
}

/// Multi-head scaled dot-product attention. `q: n_q x d`, `k, v: n_k x d`;
/// head `h` uses columns `[h*dh, (h+1)*dh)`. With `causal`, query `t`
/// attends only keys `0..=t`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, causal: bool) -> Result<(Tensor, AttentionCache)> {
    let d = q.cols();
    require(
        heads > 0 && d.is_multiple_of(heads) && k.cols() == d && v.cols() == d && k.rows() == v.rows(),
        || {
            format!(
                "attention: q {:?}, k {:?}, v {:?}, heads {heads}",
                q.shape(),
                k.shape(),
                v.shape()
            )
        },
    )?;
    let (nq, nk) = (q.rows(), k.rows());
    require(!causal || nq <= nk, || "attention: causal needs n_q <= n_k".into())?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut y = Tensor::zeros(&[nq, d]);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut p = Tensor::zeros(&[nq, nk]);
        for t in 0..nq {
            let qr = &q.row(t)[cols.clone()];
            let visible = if causal { t + 1 } else { nk };
            let pr = p.row_mut(t);
            for (s, score) in pr[..visible].iter_mut().enumerate() {
                let kr = &k.row(s)[cols.clone()];
                *score = qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_in_place(&mut pr[..visible]);
            for x in pr[visible..].iter_mut() {
                *x = 0.0;
            }
            let mut out = vec![0.0; dh];
            for (s, &w) in pr[..visible].iter().enumerate() {
                let vr = &v.row(s)[cols.clone()];
                for (o, &vv) in out.iter_mut().zip(vr) {
                    *o += w * vv;
                }
            }
            y.row_mut(t)[cols.clone()].copy_from_slice(&out);
        }
        probs.push(p);
    }
    Ok((y, AttentionCache { probs }))
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cache: &AttentionCache,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let heads = cache.probs.len();
    let d = q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (nq, nk) = (q.rows(), k.rows());
    require(dy.rows() == nq && dy.cols() == d, || {
        format!("attention_backward: dy {:?}", dy.shape())
    })?;
    let mut dq = Tensor::zeros(&[nq, d]);
    let mut dk = Tensor::zeros(&[nk, d]);
    let mut dv = Tensor::zeros(&[nk, d]);
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = h * dh..(h + 1) * dh;
        for t in 0..nq {
            let pr = p.row(t);
            let g = &dy.row(t)[cols.clone()];
            // dP[s] = g . v_s ; dV_s += P[t,s] g
            let mut dp = vec![0.0; nk];
            for s in 0..nk {
                if pr[s] == 0.0 {
                    continue;
                }
                let vr = &v.row(s)[cols.clone()];
                dp[s] = g.iter().zip(vr).map(|(a, b)| a * b).sum();
                let dvr = &mut dv.row_mut(s)[cols.clone()];
                for (x, &gv) in dvr.iter_mut().zip(g) {
                    *x += pr[s] * gv;
                }
            }
            let dot: f64 = pr.iter().zip(&dp).map(|(a, b)| a * b).sum();
            let qr = q.row(t)[cols.clone()].to_vec();
            for s in 0..nk {
                if pr[s] == 0.0 {
                    continue;
                }
                let ds = pr[s] * (dp[s] - dot) * scale;
                let kr = k.row(s)[cols.clone()].to_vec();
                let dqr = &mut dq.row_mut(t)[cols.clone()];
                for (x, &kv) in dqr.iter_mut().zip(&kr) {
                    *x += ds * kv;
                }
                let dkr = &mut dk.row_mut(s)[cols.clone()];
                for (x, &qv) in dkr.iter_mut().zip(&qr) {
                    *x += ds * qv;
                }
            }
        }
    }
    Ok((dq, dk, dv))
}

/// Mean token cross entropy over positions where `mask` is true.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<f64> {
    check_ce(logits, targets, mask)?;
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::DegenerateBatch);
    }
    let mut total = 0.0;
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / count as f64)
}

/// Gradient of [`cross_entropy`] w.r.t. logits: `(softmax - onehot) / count`
/// on unmasked rows, zero elsewhere.
pub fn cross_entropy_backward(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<Tensor> {
    check_ce(logits, targets, mask)?;
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::DegenerateBatch);
    }
    let inv = 1.0 / count as f64;
    let mut g = Tensor::zeros(logits.shape());
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let gr = g.row_mut(r);
        gr.copy_from_slice(logits.row(r));
        softmax_in_place(gr);
        gr[t] -= 1.0;
        for x in gr.iter_mut() {
            *x *= inv;
        }
    }
    Ok(g)
}

fn check_ce(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<()> {
    require(logits.rows() == targets.len() && targets.len() == mask.len(), || {
        format!(
            "cross_entropy: logits {:?}, {} targets, {} mask",
            logits.shape(),
            targets.len(),
            mask.len()
        )
    })?;
    let v = logits.cols();
    if let Some((&t, _)) = targets.iter().zip(mask).find(|(&t, &m)| m && t >= v) {
        return Err(Error::out_of_range("target", t, v));
    }
    Ok(())
}
