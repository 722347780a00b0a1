//! Block decomposition of the scene volume.
//!
//! Large scenes split into a regular grid of blocks, each backed by its own
//! tri-plane grid. Near block boundaries the fields of neighboring blocks are
//! blended with per-axis linear ramps so the composed field stays continuous.
//! The ramp weights along the three axes multiply together, and at every
//! interior point the weights over contributing blocks sum to one.

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::scalar::Real;

/// A block decomposition of `aabb` into `blocks = (nx, ny, nz)` cells with
/// blending ramps of half-width `overlap_frac * cell_extent` around each
/// interior boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout<T> {
    pub aabb: Aabb<T>,
    pub blocks: [usize; 3],
    /// Ramp half-width as a fraction of the per-axis cell extent, in
    /// `[0, 0.5)`. Zero gives hard block boundaries.
    pub overlap_frac: T,
}

/// One blend contribution: which block, with what weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockWeight<T> {
    pub block: [usize; 3],
    pub weight: T,
}

impl<T: Real> BlockLayout<T> {
    pub fn new(aabb: Aabb<T>, blocks: [usize; 3], overlap_frac: T) -> Result<Self> {
        if blocks.iter().any(|&b| b == 0) {
            return Err(Error::invalid(
                "BlockLayout::new",
                format!("block counts must be positive, got {blocks:?}"),
            ));
        }
        if overlap_frac < T::zero() || overlap_frac >= T::of(0.5) {
            return Err(Error::invalid(
                "BlockLayout::new",
                format!("overlap_frac must lie in [0, 0.5), got {overlap_frac}"),
            ));
        }
        Ok(BlockLayout {
            aabb,
            blocks,
            overlap_frac,
        })
    }

    /// Total number of blocks.
    pub fn n_blocks(&self) -> usize {
        self.blocks[0] * self.blocks[1] * self.blocks[2]
    }

    /// Flattens a block index triple, x fastest-varying last (row-major over
    /// `(bx, by, bz)`).
    pub fn block_index(&self, b: [usize; 3]) -> usize {
        debug_assert!(b[0] < self.blocks[0] && b[1] < self.blocks[1] && b[2] < self.blocks[2]);
        (b[0] * self.blocks[1] + b[1]) * self.blocks[2] + b[2]
    }

    /// The axis-aligned region a block's grid must cover: its cell expanded
    /// by the ramp half-width into neighboring cells (clipped to the scene
    /// bounds), since a block still contributes inside a neighbor's ramp zone.
    pub fn block_region(&self, b: [usize; 3]) -> Aabb<T> {
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        for ax in 0..3 {
            let (cell_lo, cell_hi, margin) = self.axis_cell(ax, b[ax]);
            let min_ax = self.aabb.min.get(ax);
            let max_ax = self.aabb.max.get(ax);
            lo[ax] = (cell_lo - margin).max(min_ax);
            hi[ax] = (cell_hi + margin).min(max_ax);
        }
        Aabb::new(
            Vec3::new(lo[0], lo[1], lo[2]),
            Vec3::new(hi[0], hi[1], hi[2]),
        )
    }

    /// Maps a world point to unit coordinates within `block_region(b)`.
    pub fn to_unit(&self, b: [usize; 3], p: Vec3<T>) -> [T; 3] {
        let region = self.block_region(b);
        let mut u = [T::zero(); 3];
        for ax in 0..3 {
            let lo = region.min.get(ax);
            let hi = region.max.get(ax);
            u[ax] = ((p.get(ax) - lo) / (hi - lo)).max(T::zero()).min(T::one());
        }
        u
    }

    /// Blend weights at a world point: up to eight `(block, weight)` pairs
    /// with weights summing to one. Points outside the scene bounds error.
    pub fn lookup(&self, p: Vec3<T>) -> Result<Vec<BlockWeight<T>>> {
        let mut out = Vec::with_capacity(8);
        self.lookup_into(p, &mut out)?;
        Ok(out)
    }

    /// Allocation-free variant of [`BlockLayout::lookup`] for per-sample hot
    /// paths; clears and refills `out`.
    pub fn lookup_into(&self, p: Vec3<T>, out: &mut Vec<BlockWeight<T>>) -> Result<()> {
        out.clear();
        if !self.aabb.contains(p) {
            return Err(Error::OutOfBounds {
                x: p.x.as_f64(),
                y: p.y.as_f64(),
                z: p.z.as_f64(),
            });
        }
        // Per axis: one or two contributing block indices with 1D ramp weights.
        let mut axis_w = [[(0usize, T::zero()); 2]; 3];
        let mut axis_n = [0usize; 3];
        for ax in 0..3 {
            let (w, n) = self.axis_weights(ax, p.get(ax));
            axis_w[ax] = w;
            axis_n[ax] = n;
        }
        for &(bx, wx) in &axis_w[0][..axis_n[0]] {
            for &(by, wy) in &axis_w[1][..axis_n[1]] {
                for &(bz, wz) in &axis_w[2][..axis_n[2]] {
                    out.push(BlockWeight {
                        block: [bx, by, bz],
                        weight: wx * wy * wz,
                    });
                }
            }
        }
        Ok(())
    }

    /// Cell bounds and ramp half-width along one axis.
    fn axis_cell(&self, ax: usize, b: usize) -> (T, T, T) {
        let lo = self.aabb.min.get(ax);
        let hi = self.aabb.max.get(ax);
        let n = T::of_usize(self.blocks[ax]);
        let cell = (hi - lo) / n;
        let cell_lo = lo + cell * T::of_usize(b);
        let cell_hi = lo + cell * T::of_usize(b + 1);
        (cell_lo, cell_hi, cell * self.overlap_frac)
    }

    /// 1D blend weights along one axis, returned as up to two
    /// `(block, weight)` pairs plus a count. Away from interior boundaries a
    /// single block owns the point with weight one; within the ramp zone of
    /// half-width `m` around an interior boundary, the two adjacent blocks
    /// share it linearly (weight 1 at distance `m` on a block's own side,
    /// 0 at distance `m` on the far side, 0.5 at the boundary itself).
    fn axis_weights(&self, ax: usize, x: T) -> ([(usize, T); 2], usize) {
        let n = self.blocks[ax];
        let lo = self.aabb.min.get(ax);
        let hi = self.aabb.max.get(ax);
        let cell = (hi - lo) / T::of_usize(n);
        let m = cell * self.overlap_frac;
        let half = T::of(0.5);
        // Owning cell index, clamped so x == hi stays in the last cell.
        let rel = ((x - lo) / cell).floor().as_f64() as usize;
        let b = rel.min(n - 1);
        if m > T::zero() {
            // Ramp around the lower boundary of cell b (if interior).
            if b > 0 {
                let bnd = lo + cell * T::of_usize(b);
                let d = x - bnd; // >= 0 on our side
                if d < m {
                    let w_self = half + half * (d / m);
                    return ([(b - 1, T::one() - w_self), (b, w_self)], 2);
                }
            }
            // Ramp around the upper boundary of cell b (if interior).
            if b + 1 < n {
                let bnd = lo + cell * T::of_usize(b + 1);
                let d = bnd - x; // >= 0 on our side
                if d < m {
                    let w_self = half + half * (d / m);
                    return ([(b, w_self), (b + 1, T::one() - w_self)], 2);
                }
            }
        }
        ([(b, T::one()), (0, T::zero())], 1)
    }
}
