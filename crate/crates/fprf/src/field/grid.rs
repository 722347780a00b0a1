//! Tri-plane feature grids.
//!
//! A grid stores three 2D planes of feature vectors — XY, XZ and YZ. A query
//! at unit coordinates bilinearly interpolates each plane at its coordinate
//! pair and combines the three vectors by element-wise product, so one 3D
//! feature costs three 2D lookups instead of a dense 3D grid.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Tri-plane grid over the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct TriPlaneGrid<T> {
    /// Vertices per axis `(rx, ry, rz)`, each at least 2.
    pub resolution: [usize; 3],
    /// Feature channels per plane.
    pub channels: usize,
    /// `[rx × ry × c]`.
    pub plane_xy: Tensor<T>,
    /// `[rx × rz × c]`.
    pub plane_xz: Tensor<T>,
    /// `[ry × rz × c]`.
    pub plane_yz: Tensor<T>,
}

/// Interpolation footprint of one grid query: per plane, the low corner,
/// fractional offsets and the interpolated feature vector. Kept by the
/// training path so the backward pass can scatter without re-deriving the
/// corner weights.
#[derive(Debug, Clone)]
pub struct GridSampleCache<T> {
    /// Per plane: (row0, col0, frac_row, frac_col).
    pub corners: [(usize, usize, T, T); 3],
    /// Interpolated per-plane vectors, each `channels` long.
    pub plane_values: [Vec<T>; 3],
}

impl<T: Real> Default for GridSampleCache<T> {
    fn default() -> Self {
        GridSampleCache {
            corners: [(0, 0, T::zero(), T::zero()); 3],
            plane_values: std::array::from_fn(|_| Vec::new()),
        }
    }
}

impl<T: Real> TriPlaneGrid<T> {
    /// Seeded init: every plane entry uniform in `[0.9, 1.1]`, drawn from one
    /// ChaCha8 stream in plane order XY, XZ, YZ. Products of three entries
    /// then start near 1, a sensible feature scale for the downstream MLPs.
    pub fn init(resolution: [usize; 3], channels: usize, seed: u64) -> Self {
        assert!(
            resolution.iter().all(|&r| r >= 2),
            "tri-plane resolution must be at least 2 per axis, got {resolution:?}"
        );
        assert!(channels > 0, "tri-plane needs at least one channel");
        let [rx, ry, rz] = resolution;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plane = |a: usize, b: usize| {
            Tensor::from_fn(&[a, b, channels], |_| T::of(rng.random_range(0.9..1.1)))
        };
        let plane_xy = plane(rx, ry);
        let plane_xz = plane(rx, rz);
        let plane_yz = plane(ry, rz);
        TriPlaneGrid {
            resolution,
            channels,
            plane_xy,
            plane_xz,
            plane_yz,
        }
    }

    /// Total number of stored values.
    /// The three planes in XY, XZ, YZ order.
    pub fn planes(&self) -> [&Tensor<T>; 3] {
        [&self.plane_xy, &self.plane_xz, &self.plane_yz]
    }

    pub fn planes_mut(&mut self) -> [&mut Tensor<T>; 3] {
        [&mut self.plane_xy, &mut self.plane_xz, &mut self.plane_yz]
    }

    pub fn n_params(&self) -> usize {
        self.plane_xy.len() + self.plane_xz.len() + self.plane_yz.len()
    }

    /// Interpolates the grid at `u ∈ [0,1]³` and writes the blended feature
    /// into `out` (`channels` long). The cache records the footprint for
    /// [`TriPlaneGrid::sample_backward`]. Coordinates outside the unit cube
    /// error.
    ///
    /// Unit coordinate `u` maps to continuous vertex coordinate
    /// `u * (resolution - 1)`; a query exactly on a vertex returns the
    /// element-wise product of the three stored vectors at that vertex.
    pub fn sample(
        &self,
        u: [T; 3],
        out: &mut [T],
        cache: &mut GridSampleCache<T>,
    ) -> Result<()> {
        debug_assert_eq!(out.len(), self.channels);
        if u.iter().any(|&c| c < T::zero() || c > T::one()) {
            return Err(Error::invalid(
                "triplane_sample",
                format!(
                    "coordinate ({}, {}, {}) outside the unit cube",
                    u[0].as_f64(),
                    u[1].as_f64(),
                    u[2].as_f64()
                ),
            ));
        }
        let [rx, ry, rz] = self.resolution;
        let planes = [
            (&self.plane_xy, u[0], u[1], rx, ry),
            (&self.plane_xz, u[0], u[2], rx, rz),
            (&self.plane_yz, u[1], u[2], ry, rz),
        ];
        for (p, (plane, ua, ub, ra, rb)) in planes.into_iter().enumerate() {
            let (i0, j0, fa, fb) = corner_of(ua, ub, ra, rb);
            cache.corners[p] = (i0, j0, fa, fb);
            let vals = &mut cache.plane_values[p];
            vals.clear();
            vals.resize(self.channels, T::zero());
            bilinear_into(plane, i0, j0, fa, fb, vals);
        }
        for ch in 0..self.channels {
            out[ch] = cache.plane_values[0][ch]
                * cache.plane_values[1][ch]
                * cache.plane_values[2][ch];
        }
        Ok(())
    }

    /// Scatters `grad_out` (gradient of the blended feature) back onto the
    /// four corners of each plane, using the footprint cached by
    /// [`TriPlaneGrid::sample`]. Gradients accumulate into `grads`.
    pub fn sample_backward(
        &self,
        cache: &GridSampleCache<T>,
        grad_out: &[T],
        grads: &mut TriPlaneGridGrads<T>,
    ) {
        debug_assert_eq!(grad_out.len(), self.channels);
        // d(out)/d(plane_p corner) = corner weight * product of the other
        // two interpolated plane values.
        for p in 0..3 {
            let (i0, j0, fa, fb) = cache.corners[p];
            let (o1, o2) = match p {
                0 => (&cache.plane_values[1], &cache.plane_values[2]),
                1 => (&cache.plane_values[0], &cache.plane_values[2]),
                _ => (&cache.plane_values[0], &cache.plane_values[1]),
            };
            let gplane = match p {
                0 => &mut grads.plane_xy,
                1 => &mut grads.plane_xz,
                _ => &mut grads.plane_yz,
            };
            let cols = gplane.shape()[1];
            let c = self.channels;
            let one = T::one();
            let w = [
                (one - fa) * (one - fb),
                (one - fa) * fb,
                fa * (one - fb),
                fa * fb,
            ];
            let idx = [
                (i0 * cols + j0) * c,
                (i0 * cols + j0 + 1) * c,
                ((i0 + 1) * cols + j0) * c,
                ((i0 + 1) * cols + j0 + 1) * c,
            ];
            let gdata = gplane.data_mut();
            for ch in 0..c {
                let g = grad_out[ch] * o1[ch] * o2[ch];
                for k in 0..4 {
                    gdata[idx[k] + ch] += w[k] * g;
                }
            }
        }
    }
}

/// Low corner and fractional offsets for a bilinear lookup on an
/// `ra × rb`-vertex plane at unit coordinates `(ua, ub)`.
fn corner_of<T: Real>(ua: T, ub: T, ra: usize, rb: usize) -> (usize, usize, T, T) {
    let pos_a = ua.max(T::zero()).min(T::one()) * T::of_usize(ra - 1);
    let pos_b = ub.max(T::zero()).min(T::one()) * T::of_usize(rb - 1);
    let mut i0 = pos_a.floor().as_f64() as usize;
    let mut j0 = pos_b.floor().as_f64() as usize;
    // A coordinate exactly at the upper edge uses the last cell with frac 1.
    i0 = i0.min(ra - 2);
    j0 = j0.min(rb - 2);
    let fa = pos_a - T::of_usize(i0);
    let fb = pos_b - T::of_usize(j0);
    (i0, j0, fa, fb)
}

fn bilinear_into<T: Real>(plane: &Tensor<T>, i0: usize, j0: usize, fa: T, fb: T, out: &mut [T]) {
    let cols = plane.shape()[1];
    let c = plane.shape()[2];
    let base00 = (i0 * cols + j0) * c;
    let base01 = (i0 * cols + j0 + 1) * c;
    let base10 = ((i0 + 1) * cols + j0) * c;
    let base11 = ((i0 + 1) * cols + j0 + 1) * c;
    let one = T::one();
    let w00 = (one - fa) * (one - fb);
    let w01 = (one - fa) * fb;
    let w10 = fa * (one - fb);
    let w11 = fa * fb;
    let d = plane.data();
    for ch in 0..c {
        out[ch] = w00 * d[base00 + ch] + w01 * d[base01 + ch] + w10 * d[base10 + ch]
            + w11 * d[base11 + ch];
    }
}

/// Gradient buffers with the same plane shapes as a [`TriPlaneGrid`].
#[derive(Debug, Clone)]
pub struct TriPlaneGridGrads<T> {
    pub plane_xy: Tensor<T>,
    pub plane_xz: Tensor<T>,
    pub plane_yz: Tensor<T>,
}

impl<T: Real> TriPlaneGridGrads<T> {
    pub fn zeros_like(g: &TriPlaneGrid<T>) -> Self {
        TriPlaneGridGrads {
            plane_xy: Tensor::zeros(g.plane_xy.shape()),
            plane_xz: Tensor::zeros(g.plane_xz.shape()),
            plane_yz: Tensor::zeros(g.plane_yz.shape()),
        }
    }

    /// The three gradient planes in XY, XZ, YZ order.
    pub fn planes(&self) -> [&Tensor<T>; 3] {
        [&self.plane_xy, &self.plane_xz, &self.plane_yz]
    }

    pub fn planes_mut(&mut self) -> [&mut Tensor<T>; 3] {
        [&mut self.plane_xy, &mut self.plane_xz, &mut self.plane_yz]
    }

    pub fn zero(&mut self) {
        self.plane_xy.data_mut().fill(T::zero());
        self.plane_xz.data_mut().fill(T::zero());
        self.plane_yz.data_mut().fill(T::zero());
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in [
            (&mut self.plane_xy, &other.plane_xy),
            (&mut self.plane_xz, &other.plane_xz),
            (&mut self.plane_yz, &other.plane_yz),
        ] {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
    }
}
