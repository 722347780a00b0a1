//! Sinusoidal positional encoding for view directions.

use crate::scalar::Real;

/// Output length of [`positional_encoding`] for a `dim`-vector.
pub fn posenc_len(dim: usize, n_freq: usize) -> usize {
    2 * dim * n_freq
}

/// Encodes `v` as `[sin(2^j π v), cos(2^j π v)]` for `j = 0..n_freq`.
///
/// Layout: frequencies are outermost; within one frequency all sine
/// components come first, then all cosines. For `v = [a, b]`, `n_freq = 2`:
///
/// ```text
/// [sin πa, sin πb, cos πa, cos πb, sin 2πa, sin 2πb, cos 2πa, cos 2πb]
/// ```
///
/// `n_freq = 0` produces an empty vector (no view conditioning).
pub fn positional_encoding<T: Real>(v: &[T], n_freq: usize, out: &mut Vec<T>) {
    out.clear();
    out.reserve(posenc_len(v.len(), n_freq));
    for j in 0..n_freq {
        let scale = T::of(std::f64::consts::PI * (1u64 << j) as f64);
        for &x in v {
            out.push((scale * x).sin());
        }
        for &x in v {
            out.push((scale * x).cos());
        }
    }
}
