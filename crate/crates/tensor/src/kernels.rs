//! Row-level numeric kernels shared by the tape and the no-grad inference
//! path. Each output row depends only on its own input row and is computed
//! in a fixed order, so processing rows one at a time or all at once gives
//! bitwise-identical results.

use crate::real::Real;

/// Dot product with eight fixed accumulation lanes, combined pairwise.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 8;
    let mut acc = [T::zero(); 8];
    for c in 0..chunks {
        let pa = &a[c * 8..c * 8 + 8];
        let pb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += pa[l] * pb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    let s0 = (acc[0] + acc[4]) + (acc[2] + acc[6]);
    let s1 = (acc[1] + acc[5]) + (acc[3] + acc[7]);
    (s0 + s1) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            axpy(orow, av, &b[p * n..(p + 1) * n]);
        }
    }
    out
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`.
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `acc[k×n] += a[m×k]ᵀ · g[m×n]`.
pub fn matmul_at_acc<T: Real>(acc: &mut [T], a: &[T], g: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(&mut acc[p * n..(p + 1) * n], av, grow);
            }
        }
    }
}

/// `acc[m×k] += g[m×n] · b[k×n]ᵀ`.
pub fn matmul_bt_acc<T: Real>(acc: &mut [T], g: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            acc[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `acc[m×k] += g[m×n] · b[n×k]`.
pub fn matmul_acc<T: Real>(acc: &mut [T], g: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &mut acc[i * k..(i + 1) * k];
        for j in 0..n {
            let gv = g[i * n + j];
            if gv != T::zero() {
                axpy(arow, gv, &b[j * k..(j + 1) * k]);
            }
        }
    }
}

/// Row-wise layer norm. Returns `(y, mean, rstd)`.
pub fn layer_norm_row<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T, y: &mut [T]) -> (T, T) {
    let n = T::lit(x.len() as f64);
    let mut sum = T::zero();
    for &v in x {
        sum += v;
    }
    let mean = sum / n;
    let mut var = T::zero();
    for &v in x {
        let d = v - mean;
        var += d * d;
    }
    var /= n;
    let rstd = T::one() / (var + eps).sqrt();
    for i in 0..x.len() {
        y[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
    (mean, rstd)
}

/// Numerically stable softmax over `x`, written into `out`.
pub fn softmax_slice<T: Real>(x: &[T], out: &mut [T]) {
    let mut max = T::neg_infinity();
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let three = T::lit(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Causal multi-head attention for query row `i`.
///
/// `q_row` is row `i` of Q (`d` wide); `k` and `v` hold at least rows
/// `0..=i`. Writes the `d`-wide output row and the per-head attention
/// weights (`heads × (i+1)`, head-major) into `probs`.
pub fn attention_row<T: Real>(
    q_row: &[T],
    k: &[T],
    v: &[T],
    i: usize,
    d: usize,
    heads: usize,
    out: &mut [T],
    probs: &mut [T],
) {
    let dh = d / heads;
    let len = i + 1;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut scores = vec![T::zero(); len];
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for h in 0..heads {
        let qh = &q_row[h * dh..(h + 1) * dh];
        for (j, s) in scores.iter_mut().enumerate() {
            *s = dot(qh, &k[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
        }
        let p = &mut probs[h * len..(h + 1) * len];
        softmax_slice(&scores, p);
        let oh = &mut out[h * dh..(h + 1) * dh];
        for (j, &pj) in p.iter().enumerate() {
            axpy(oh, pj, &v[j * d + h * dh..j * d + (h + 1) * dh]);
        }
    }
}
