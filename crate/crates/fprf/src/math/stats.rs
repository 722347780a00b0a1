//! Channel statistics and row-wise softmax.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Variance floor added before the square root so that the returned standard
/// deviation is always strictly positive, even for constant channels.
pub const EPS_VAR: f64 = 1e-8;

/// Per-column mean and standard deviation of a `[n × c]` matrix.
///
/// Uses the population variance (divide by `n`, not `n - 1`) and returns
/// `sigma = sqrt(var + EPS_VAR)`. Sums are accumulated in `f64` regardless of
/// the working precision.
pub fn channel_stats<T: Real>(rows: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    if rows.rank() != 2 {
        return Err(Error::shape(
            "channel_stats",
            format!("expected rank 2, got shape {:?}", rows.shape()),
        ));
    }
    let n = rows.rows();
    let c = rows.shape()[1];
    let mut sum = vec![0.0f64; c];
    let mut sum_sq = vec![0.0f64; c];
    for i in 0..n {
        for (j, &v) in rows.row(i).iter().enumerate() {
            let v = v.as_f64();
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut mu = Vec::with_capacity(c);
    let mut sigma = Vec::with_capacity(c);
    for j in 0..c {
        let m = sum[j] * inv_n;
        let var = (sum_sq[j] * inv_n - m * m).max(0.0);
        mu.push(T::of(m));
        sigma.push(T::of((var + EPS_VAR).sqrt()));
    }
    Ok((mu, sigma))
}

/// Gradient of [`channel_stats`] with respect to the input rows.
///
/// Given upstream gradients for the per-channel mean and standard deviation,
/// returns `grad_rows[i][j] = grad_mu[j]/n + grad_sigma[j]·(x[i][j] − mu[j]) /
/// (n·sigma[j])`. Pass the `mu`/`sigma` returned by the matching forward
/// call; the variance floor makes the division safe even for constant
/// channels.
pub fn channel_stats_backward<T: Real>(
    rows: &Tensor<T>,
    mu: &[T],
    sigma: &[T],
    grad_mu: &[T],
    grad_sigma: &[T],
) -> Result<Tensor<T>> {
    if rows.rank() != 2 {
        return Err(Error::shape(
            "channel_stats_backward",
            format!("expected rank 2, got shape {:?}", rows.shape()),
        ));
    }
    let n = rows.rows();
    let c = rows.shape()[1];
    if mu.len() != c || sigma.len() != c || grad_mu.len() != c || grad_sigma.len() != c {
        return Err(Error::shape(
            "channel_stats_backward",
            format!("stats/gradient lengths must all be {c}"),
        ));
    }
    let inv_n = T::of(1.0 / n as f64);
    let mut grad = Tensor::zeros(rows.shape());
    for i in 0..n {
        let src = rows.row(i);
        let dst = grad.row_mut(i);
        for j in 0..c {
            dst[j] = inv_n * (grad_mu[j] + grad_sigma[j] * (src[j] - mu[j]) / sigma[j]);
        }
    }
    Ok(grad)
}

/// Row-wise softmax with max subtraction for stability.
///
/// Every row of the result is non-negative and sums to 1 (up to rounding);
/// the maximum element of each input row contributes `exp(0) = 1`, so the
/// normalizer is never zero.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::shape(
            "softmax_rows",
            format!("expected rank 2, got shape {:?}", logits.shape()),
        ));
    }
    let mut out = logits.clone();
    let c = out.shape()[1];
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mut max = row[0];
        for &v in row.iter().skip(1) {
            max = max.max(v);
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
        debug_assert_eq!(row.len(), c);
    }
    Ok(out)
}

/// Softmax of a single logit row into a caller-provided buffer; the row
/// kernel behind [`softmax_rows`], exposed for per-sample hot paths.
#[inline]
pub(crate) fn softmax_row_into<T: Real>(logits: &[T], out: &mut [T]) {
    debug_assert_eq!(logits.len(), out.len());
    let mut max = logits[0];
    for &v in &logits[1..] {
        max = max.max(v);
    }
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = (v - max).exp();
        sum += *o;
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}
