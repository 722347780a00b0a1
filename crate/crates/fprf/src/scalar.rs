//! Scalar abstraction over `f32`/`f64`.
//!
//! Production code runs in `f32`; the finite-difference gradient checks
//! instantiate the same kernels in `f64`. Everything numeric in the crate is
//! written against [`Real`] so the two precisions share one code path.

use num_traits::Float;

/// Floating-point scalar used throughout the crate.
///
/// Implemented for `f32` and `f64` only. The conversion helpers are lossy by
/// design (`of` rounds an `f64` constant to the working precision).
pub trait Real:
    Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Rounds an `f64` value to this precision.
    fn of(v: f64) -> Self;
    /// Widens to `f64`. (Named to avoid clashing with `ToPrimitive`.)
    fn as_f64(self) -> f64;
    /// Rounds to `f32`.
    fn as_f32(self) -> f32;
    /// Converts a count to this precision.
    fn of_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Real for f32 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Dot product with a fixed eight-accumulator expression tree.
///
/// The lane split lets LLVM vectorize without licensing any reassociation of
/// its own, so results are bit-identical across runs, thread counts and
/// platforms with the same float semantics — while running several times
/// faster than a strictly sequential reduction.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let lanes = n / 8 * 8;
    let mut acc = [T::zero(); 8];
    let mut i = 0;
    while i < lanes {
        // Manually unrolled: each lane owns a fixed subset of the terms.
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
        acc[4] += a[i + 4] * b[i + 4];
        acc[5] += a[i + 5] * b[i + 5];
        acc[6] += a[i + 6] * b[i + 6];
        acc[7] += a[i + 7] * b[i + 7];
        i += 8;
    }
    let mut tail = T::zero();
    while i < n {
        tail += a[i] * b[i];
        i += 1;
    }
    // Fixed combination order: pairwise within the lane array, then the tail.
    let s0 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let s1 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    (s0 + s1) + tail
}

/// `y += alpha * x` over slices of equal length.
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Mixes a base seed with a stream tag into a fresh 64-bit seed.
///
/// SplitMix64 finalizer; used everywhere a component needs its own
/// deterministic RNG stream derived from one user-facing seed.
#[inline]
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64) * 0.25 - 3.0).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn dot_is_deterministic() {
        let a: Vec<f32> = (0..100).map(|i| (i as f32).sin()).collect();
        let b: Vec<f32> = (0..100).map(|i| (i as f32).cos()).collect();
        assert_eq_bits(dot(&a, &b), dot(&a, &b));
    }

    fn assert_eq_bits(x: f32, y: f32) {
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn derive_seed_separates_tags() {
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
