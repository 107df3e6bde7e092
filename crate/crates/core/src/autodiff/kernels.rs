//! Dense CPU kernels shared by the tape ops and the incremental inference path.
//!
//! All reductions run in a fixed sequential order so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn log_softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Result<Vec<T>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    let mut out = vec![T::zero(); x.len()];
    for (row, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        log_softmax_into(row, dst);
    }
    Ok(out)
}

/// Single-row log-softmax; caller guarantees finite input.
pub fn log_softmax_into<T: Scalar>(row: &[T], dst: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for &v in row {
        sum += (v - max).exp();
    }
    let log_sum = sum.ln();
    for (d, &v) in dst.iter_mut().zip(row) {
        *d = (v - max) - log_sum;
    }
}

/// `y = x @ w + b` for `x: [m, k]`, `w: [k, n]`, `b: [n]`.
pub fn linear<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if let Some(b) = b {
        for row in out.chunks_mut(n) {
            row.copy_from_slice(b);
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), x, false, w, false, beta, &mut out);
    out
}

/// Layer norm over the last dimension. Returns output plus per-row mean and inverse std.
pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], cols: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / cols;
    let mut out = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    let n = T::of(cols as f64);
    let eps = T::of(LAYER_NORM_EPS);
    for (row, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        for j in 0..cols {
            dst[j] = (row[j] - mean) * rstd * gamma[j] + beta[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

/// Backward of [`layer_norm`]; accumulates into the three gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    means: &[T],
    rstds: &[T],
    dy: &[T],
    cols: usize,
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let n = T::of(cols as f64);
    let rows = x.len() / cols;
    let mut dgamma = dgamma;
    let mut dbeta = dbeta;
    let mut dx = dx;
    let mut xhat = vec![T::zero(); cols];
    let mut dxhat = vec![T::zero(); cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let g = &dy[r * cols..(r + 1) * cols];
        let (mean, rstd) = (means[r], rstds[r]);
        for j in 0..cols {
            xhat[j] = (row[j] - mean) * rstd;
            dxhat[j] = g[j] * gamma[j];
        }
        if let Some(dg) = dgamma.as_deref_mut() {
            for j in 0..cols {
                dg[j] += g[j] * xhat[j];
            }
        }
        if let Some(db) = dbeta.as_deref_mut() {
            for j in 0..cols {
                db[j] += g[j];
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let sum_d = dxhat.iter().copied().sum::<T>();
            let sum_dx = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>();
            let drow = &mut dx[r * cols..(r + 1) * cols];
            for j in 0..cols {
                drow[j] += rstd * (dxhat[j] - sum_d / n - xhat[j] * sum_dx / n);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU (smooth everywhere, which keeps finite differences honest).
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Geometry of a packed `[batch * seq, 3 * dim]` query/key/value buffer.
#[derive(Clone, Copy, Debug)]
pub struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub dim: usize,
}

impl AttnShape {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Causal multi-head self-attention. Returns the `[batch * seq, dim]` output and
/// the `[batch, heads, seq, seq]` attention probabilities (zero above the diagonal).
pub fn causal_attention<T: Scalar>(qkv: &[T], s: AttnShape) -> (Vec<T>, Vec<T>) {
    let AttnShape { batch, seq, heads, dim } = s;
    let hd = s.head_dim();
    let stride = 3 * dim;
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut out = vec![T::zero(); batch * seq * dim];
    let mut probs = vec![T::zero(); batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let qo = h * hd;
            let ko = dim + h * hd;
            let vo = 2 * dim + h * hd;
            for i in 0..seq {
                let qi = &qkv[(b * seq + i) * stride + qo..][..hd];
                let prow = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                let mut max = T::neg_infinity();
                for j in 0..=i {
                    let kj = &qkv[(b * seq + j) * stride + ko..][..hd];
                    let s = dot(qi, kj) * scale;
                    prow[j] = s;
                    max = max.max(s);
                }
                let mut z = T::zero();
                for p in prow.iter_mut().take(i + 1) {
                    *p = (*p - max).exp();
                    z += *p;
                }
                let orow = &mut out[(b * seq + i) * dim + qo..][..hd];
                for j in 0..=i {
                    prow[j] /= z;
                    let vj = &qkv[(b * seq + j) * stride + vo..][..hd];
                    for (o, &v) in orow.iter_mut().zip(vj) {
                        *o += prow[j] * v;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Backward of [`causal_attention`], accumulating into `dqkv`.
pub fn causal_attention_backward<T: Scalar>(qkv: &[T], probs: &[T], dout: &[T], s: AttnShape, dqkv: &mut [T]) {
    let AttnShape { batch, seq, heads, dim } = s;
    let hd = s.head_dim();
    let stride = 3 * dim;
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut dp = vec![T::zero(); seq];
    for b in 0..batch {
        for h in 0..heads {
            let qo = h * hd;
            let ko = dim + h * hd;
            let vo = 2 * dim + h * hd;
            for i in 0..seq {
                let prow = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                let doi = &dout[(b * seq + i) * dim + qo..][..hd];
                let mut weighted = T::zero();
                for j in 0..=i {
                    let vj = &qkv[(b * seq + j) * stride + vo..][..hd];
                    dp[j] = dot(doi, vj);
                    weighted += prow[j] * dp[j];
                    let dvj = &mut dqkv[(b * seq + j) * stride + vo..][..hd];
                    for (d, &g) in dvj.iter_mut().zip(doi) {
                        *d += prow[j] * g;
                    }
                }
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    // dq_i += ds * k_j ; dk_j += ds * q_i
                    for c in 0..hd {
                        let kj = qkv[(b * seq + j) * stride + ko + c];
                        let qi = qkv[(b * seq + i) * stride + qo + c];
                        dqkv[(b * seq + i) * stride + qo + c] += ds * kj;
                        dqkv[(b * seq + j) * stride + ko + c] += ds * qi;
                    }
                }
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `ln(max(1 - exp(x), eps))` and its derivative (zero inside the clamp).
pub fn log1m_exp<T: Scalar>(x: T, eps: T) -> (T, T) {
    let one_minus = -x.exp_m1();
    if one_minus > eps {
        (one_minus.ln(), -(x.exp()) / one_minus)
    } else {
        (eps.ln(), T::zero())
    }
}

/// `y = x @ w + b` for a single row `x: [k]`, `w: [k, n]`.
pub fn vec_mat<T: Scalar>(x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let n = b.len();
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    y
}
