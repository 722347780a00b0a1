//! The two scene fields.
//!
//! Both fields share one spatial skeleton: the scene volume decomposed into
//! blocks ([`BlockLayout`]), each block backed by a [`TriPlaneGrid`]. A query
//! blends the grids of the covering blocks into one feature vector and feeds
//! it through a small MLP:
//!
//! * [`SceneContentField`] — a trunk turns the blended grid feature into a
//!   hidden vector whose first channel, through a softplus, is the volume
//!   density; the full hidden vector concatenated with the positional
//!   encoding of the view direction feeds a head that emits the
//!   view-dependent content feature.
//! * [`SceneSemanticField`] — its own grids and a head that maps the blended
//!   grid feature straight to the semantic feature. No direction enters the
//!   path anywhere, so the output is view-independent by construction (and
//!   so is the density, which never sees a direction either).
//!
//! Sampling is split into a density phase and a feature phase so the
//! renderer can skip feature evaluation for samples whose rendering weight
//! is negligible. Every forward records its intermediates in a caller-owned
//! cache; the backward passes replay those caches and accumulate into
//! gradient buffers shaped like the parameters.

mod grid;
mod layout;

pub use grid::{GridSampleCache, TriPlaneGrid, TriPlaneGridGrads};
pub use layout::{BlockLayout, BlockWeight};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::math::{positional_encoding, posenc_len, Activation, MlpGrads, MlpParams, MlpWorkspace};
use crate::scalar::{axpy, derive_seed, Real};

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`]: the logistic sigmoid, stable in both tails.
pub fn softplus_grad<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Structural hyperparameters shared by both fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Blocks per axis; `[1, 1, 1]` for small scenes.
    pub blocks: [usize; 3],
    /// Blend ramp half-width as a fraction of the block cell, in `[0, 0.5)`.
    pub overlap_frac: f64,
    /// Content tri-plane vertices per axis (per block).
    pub content_resolution: [usize; 3],
    /// Semantic tri-plane vertices per axis (per block); the semantic field
    /// shares the block layout but may use a coarser grid.
    pub semantic_resolution: [usize; 3],
    /// Channels per tri-plane (both fields).
    pub grid_channels: usize,
    /// Content feature width; must match the content encoder.
    pub content_channels: usize,
    /// Semantic feature width; must match the semantic encoder.
    pub semantic_channels: usize,
    /// Hidden width of trunk and heads.
    pub hidden: usize,
    /// Positional-encoding frequencies for the view direction.
    pub n_freq: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            blocks: [1, 1, 1],
            overlap_frac: 0.15,
            content_resolution: [48, 48, 48],
            semantic_resolution: [32, 32, 32],
            grid_channels: 16,
            content_channels: 32,
            semantic_channels: 16,
            hidden: 32,
            n_freq: 4,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("FieldConfig::validate", detail));
        if self.blocks.iter().any(|&b| b == 0) {
            return bad(format!("blocks must be positive, got {:?}", self.blocks));
        }
        for (name, res) in [
            ("content_resolution", self.content_resolution),
            ("semantic_resolution", self.semantic_resolution),
        ] {
            if res.iter().any(|&r| r < 2) {
                return bad(format!("{name} needs at least 2 vertices per axis, got {res:?}"));
            }
        }
        for (name, v) in [
            ("grid_channels", self.grid_channels),
            ("content_channels", self.content_channels),
            ("semantic_channels", self.semantic_channels),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..0.5).contains(&self.overlap_frac) {
            return bad(format!(
                "overlap_frac must lie in [0, 0.5), got {}",
                self.overlap_frac
            ));
        }
        Ok(())
    }
}

// Seed tags for the parameter streams of one field; block grids get a
// disjoint tag range per field so content and semantic never share a stream.
const TAG_TRUNK: u64 = 1;
const TAG_CONTENT_HEAD: u64 = 2;
const TAG_SEMANTIC_HEAD: u64 = 3;
const TAG_CONTENT_GRID: u64 = 0x1_0000;
const TAG_SEMANTIC_GRID: u64 = 0x2_0000;

/// Density and view-conditioned content feature over the scene volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContentField<T> {
    pub layout: BlockLayout<T>,
    /// One grid per block, indexed by [`BlockLayout::block_index`].
    pub grids: Vec<TriPlaneGrid<T>>,
    /// Grid feature → hidden vector; channel 0 is the raw density.
    pub trunk: MlpParams<T>,
    /// Hidden vector ++ encoded direction → content feature.
    pub head: MlpParams<T>,
    /// Frequencies used to encode the direction for `head`.
    pub n_freq: usize,
}

/// View-independent semantic feature over the scene volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSemanticField<T> {
    pub layout: BlockLayout<T>,
    pub grids: Vec<TriPlaneGrid<T>>,
    /// Grid feature → semantic feature.
    pub head: MlpParams<T>,
}

/// Intermediates of one content-field sample, reused across samples and
/// replayed by the backward pass.
#[derive(Debug, Clone)]
pub struct ContentSampleCache<T> {
    lookup: Vec<BlockWeight<T>>,
    /// Contributing blocks as (flat index, blend weight).
    blocks: Vec<(usize, T)>,
    /// Grid footprints, parallel to `blocks`.
    grid_caches: Vec<GridSampleCache<T>>,
    /// Blended grid feature.
    g: Vec<T>,
    grid_tmp: Vec<T>,
    trunk_ws: MlpWorkspace<T>,
    /// Raw density (trunk output channel 0) before the softplus.
    raw_density: T,
    head_in: Vec<T>,
    head_ws: MlpWorkspace<T>,
    posenc_tmp: Vec<T>,
    // Backward scratch.
    grad_head_in: Vec<T>,
    grad_h: Vec<T>,
    grad_g: Vec<T>,
    grad_g_scaled: Vec<T>,
}

impl<T: Real> Default for ContentSampleCache<T> {
    fn default() -> Self {
        ContentSampleCache {
            lookup: Vec::new(),
            blocks: Vec::new(),
            grid_caches: Vec::new(),
            g: Vec::new(),
            grid_tmp: Vec::new(),
            trunk_ws: MlpWorkspace::new(),
            raw_density: T::zero(),
            head_in: Vec::new(),
            head_ws: MlpWorkspace::new(),
            posenc_tmp: Vec::new(),
            grad_head_in: Vec::new(),
            grad_h: Vec::new(),
            grad_g: Vec::new(),
            grad_g_scaled: Vec::new(),
        }
    }
}

/// Intermediates of one semantic-field sample.
#[derive(Debug, Clone)]
pub struct SemanticSampleCache<T> {
    lookup: Vec<BlockWeight<T>>,
    blocks: Vec<(usize, T)>,
    grid_caches: Vec<GridSampleCache<T>>,
    g: Vec<T>,
    grid_tmp: Vec<T>,
    head_ws: MlpWorkspace<T>,
    grad_g: Vec<T>,
    grad_g_scaled: Vec<T>,
}

impl<T: Real> Default for SemanticSampleCache<T> {
    fn default() -> Self {
        SemanticSampleCache {
            lookup: Vec::new(),
            blocks: Vec::new(),
            grid_caches: Vec::new(),
            g: Vec::new(),
            grid_tmp: Vec::new(),
            head_ws: MlpWorkspace::new(),
            grad_g: Vec::new(),
            grad_g_scaled: Vec::new(),
        }
    }
}

/// Blends the grids of the covering blocks at `p` into `cache.g` and records
/// the footprint. Shared by both fields.
fn blended_grid_feature<T: Real>(
    layout: &BlockLayout<T>,
    grids: &[TriPlaneGrid<T>],
    p: Vec3<T>,
    channels: usize,
    lookup: &mut Vec<BlockWeight<T>>,
    blocks: &mut Vec<(usize, T)>,
    grid_caches: &mut Vec<GridSampleCache<T>>,
    grid_tmp: &mut Vec<T>,
    g: &mut Vec<T>,
) -> Result<()> {
    layout.lookup_into(p, lookup)?;
    g.clear();
    g.resize(channels, T::zero());
    grid_tmp.resize(channels, T::zero());
    while grid_caches.len() < lookup.len() {
        grid_caches.push(GridSampleCache::default());
    }
    blocks.clear();
    for i in 0..lookup.len() {
        let bw = lookup[i];
        let bi = layout.block_index(bw.block);
        let u = layout.to_unit(bw.block, p);
        grids[bi].sample(u, grid_tmp, &mut grid_caches[i])?;
        axpy(bw.weight, grid_tmp, g);
        blocks.push((bi, bw.weight));
    }
    Ok(())
}

/// Scatters the gradient of the blended grid feature back onto the
/// contributing grids, applying each block's blend weight.
fn scatter_grid_grads<T: Real>(
    grids: &[TriPlaneGrid<T>],
    blocks: &[(usize, T)],
    grid_caches: &[GridSampleCache<T>],
    grad_g: &[T],
    grad_g_scaled: &mut Vec<T>,
    out: &mut [TriPlaneGridGrads<T>],
) {
    for (i, &(bi, w)) in blocks.iter().enumerate() {
        grad_g_scaled.clear();
        grad_g_scaled.extend(grad_g.iter().map(|&v| v * w));
        grids[bi].sample_backward(&grid_caches[i], grad_g_scaled, &mut out[bi]);
    }
}

impl<T: Real> SceneContentField<T> {
    /// Builds a field with seeded grids and MLPs. The trunk's output bias for
    /// the raw-density channel starts at −5 so a fresh scene is near-empty:
    /// early training then raises density only where the data wants it, and
    /// renders of an untrained field are near-black.
    pub fn init(aabb: Aabb<T>, cfg: &FieldConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = BlockLayout::new(aabb, cfg.blocks, T::of(cfg.overlap_frac))?;
        let grids = (0..layout.n_blocks())
            .map(|i| {
                TriPlaneGrid::init(
                    cfg.content_resolution,
                    cfg.grid_channels,
                    derive_seed(seed, TAG_CONTENT_GRID + i as u64),
                )
            })
            .collect();
        let mut trunk = MlpParams::init(
            &[cfg.grid_channels, cfg.hidden, cfg.hidden],
            Activation::Identity,
            derive_seed(seed, TAG_TRUNK),
        );
        let last = trunk.layers.len() - 1;
        trunk.layers[last].bias[0] = T::of(-5.0);
        let head_in = cfg.hidden + posenc_len(3, cfg.n_freq);
        let head = MlpParams::init(
            &[head_in, cfg.hidden, cfg.content_channels],
            Activation::Identity,
            derive_seed(seed, TAG_CONTENT_HEAD),
        );
        Ok(SceneContentField {
            layout,
            grids,
            trunk,
            head,
            n_freq: cfg.n_freq,
        })
    }

    pub fn grid_channels(&self) -> usize {
        self.grids[0].channels
    }

    pub fn content_channels(&self) -> usize {
        self.head.out_features()
    }

    fn hidden(&self) -> usize {
        self.trunk.out_features()
    }

    /// Density phase: blends the grids at `p`, runs the trunk, and returns
    /// `softplus(raw density)`. The cache afterwards holds everything the
    /// feature phase and the backward pass need.
    pub fn sample_density(&self, p: Vec3<T>, cache: &mut ContentSampleCache<T>) -> Result<T> {
        blended_grid_feature(
            &self.layout,
            &self.grids,
            p,
            self.grid_channels(),
            &mut cache.lookup,
            &mut cache.blocks,
            &mut cache.grid_caches,
            &mut cache.grid_tmp,
            &mut cache.g,
        )?;
        self.trunk.forward_ws(&cache.g, &mut cache.trunk_ws)?;
        cache.raw_density = cache.trunk_ws.output()[0];
        Ok(softplus(cache.raw_density))
    }

    /// Feature phase: runs the head on the trunk output cached by
    /// [`SceneContentField::sample_density`] plus the encoded direction, and
    /// writes the content feature. `dir` should be unit length (the public
    /// query validates; this hot path trusts the renderer).
    pub fn sample_feature(
        &self,
        dir: Vec3<T>,
        feature: &mut [T],
        cache: &mut ContentSampleCache<T>,
    ) -> Result<()> {
        debug_assert_eq!(feature.len(), self.content_channels());
        cache.head_in.clear();
        cache.head_in.extend_from_slice(cache.trunk_ws.output());
        positional_encoding(&dir.to_array(), self.n_freq, &mut cache.posenc_tmp);
        cache.head_in.extend_from_slice(&cache.posenc_tmp);
        self.head.forward_ws(&cache.head_in, &mut cache.head_ws)?;
        feature.copy_from_slice(cache.head_ws.output());
        Ok(())
    }

    /// Full query at a point: `(density, content feature)`. Validates the
    /// direction; allocates — use the phased sampling with a reused cache in
    /// render/training loops.
    pub fn content_query(&self, p: Vec3<T>, dir: Vec3<T>) -> Result<(T, Vec<T>)> {
        let n = dir.norm();
        if (n - T::one()).abs() > T::of(1e-4) {
            return Err(Error::invalid(
                "content_query",
                format!("direction must be unit length, |d| = {}", n.as_f64()),
            ));
        }
        let mut cache = ContentSampleCache::default();
        let density = self.sample_density(p, &mut cache)?;
        let mut feature = vec![T::zero(); self.content_channels()];
        self.sample_feature(dir, &mut feature, &mut cache)?;
        Ok((density, feature))
    }

    /// Backward through one sample. `grad_density` is dL/d(density after the
    /// softplus); `grad_feature`, when the feature phase ran, is dL/d(content
    /// feature) — pass `None` for samples whose feature was skipped, which is
    /// exactly the gradient of the forward value actually computed.
    pub fn sample_backward(
        &self,
        cache: &mut ContentSampleCache<T>,
        grad_density: T,
        grad_feature: Option<&[T]>,
        grads: &mut ContentGrads<T>,
    ) {
        let hidden = self.hidden();
        cache.grad_h.clear();
        cache.grad_h.resize(hidden, T::zero());
        if let Some(gf) = grad_feature {
            cache.grad_head_in.resize(self.head.in_features(), T::zero());
            self.head.backward_ws(
                gf,
                &mut cache.head_ws,
                &mut grads.head,
                Some(&mut cache.grad_head_in),
            );
            // The first `hidden` inputs of the head are the trunk output; the
            // rest encode the direction, which has no parameters upstream.
            cache.grad_h.copy_from_slice(&cache.grad_head_in[..hidden]);
        }
        cache.grad_h[0] += grad_density * softplus_grad(cache.raw_density);
        cache.grad_g.resize(self.grid_channels(), T::zero());
        self.trunk.backward_ws(
            &cache.grad_h,
            &mut cache.trunk_ws,
            &mut grads.trunk,
            Some(&mut cache.grad_g),
        );
        scatter_grid_grads(
            &self.grids,
            &cache.blocks,
            &cache.grid_caches,
            &cache.grad_g,
            &mut cache.grad_g_scaled,
            &mut grads.grids,
        );
    }

    /// Tri-plane parameter buffers (per block: XY, XZ, YZ planes), the grid
    /// optimizer group. Order matches [`ContentGrads::grid_slices`].
    pub fn grid_param_slices_mut(&mut self) -> Vec<&mut [T]> {
        grid_slices_mut(&mut self.grids)
    }

    /// Trunk then head parameter buffers, the MLP optimizer group. Order
    /// matches [`ContentGrads::mlp_slices`].
    pub fn mlp_param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.trunk.param_slices_mut();
        out.extend(self.head.param_slices_mut());
        out
    }

    pub fn n_params(&self) -> usize {
        self.grids.iter().map(|g| g.n_params()).sum::<usize>()
            + self.trunk.n_params()
            + self.head.n_params()
    }
}

impl<T: Real> SceneSemanticField<T> {
    /// Builds the semantic field on the same block layout as the content
    /// field (identical `blocks`/`overlap_frac` from the shared config).
    pub fn init(aabb: Aabb<T>, cfg: &FieldConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = BlockLayout::new(aabb, cfg.blocks, T::of(cfg.overlap_frac))?;
        let grids = (0..layout.n_blocks())
            .map(|i| {
                TriPlaneGrid::init(
                    cfg.semantic_resolution,
                    cfg.grid_channels,
                    derive_seed(seed, TAG_SEMANTIC_GRID + i as u64),
                )
            })
            .collect();
        let head = MlpParams::init(
            &[cfg.grid_channels, cfg.hidden, cfg.semantic_channels],
            Activation::Identity,
            derive_seed(seed, TAG_SEMANTIC_HEAD),
        );
        Ok(SceneSemanticField {
            layout,
            grids,
            head,
        })
    }

    pub fn grid_channels(&self) -> usize {
        self.grids[0].channels
    }

    pub fn semantic_channels(&self) -> usize {
        self.head.out_features()
    }

    /// Samples the semantic feature at `p`. No direction input exists in
    /// this path, so the output is view-independent by construction.
    pub fn sample(
        &self,
        p: Vec3<T>,
        feature: &mut [T],
        cache: &mut SemanticSampleCache<T>,
    ) -> Result<()> {
        debug_assert_eq!(feature.len(), self.semantic_channels());
        blended_grid_feature(
            &self.layout,
            &self.grids,
            p,
            self.grid_channels(),
            &mut cache.lookup,
            &mut cache.blocks,
            &mut cache.grid_caches,
            &mut cache.grid_tmp,
            &mut cache.g,
        )?;
        self.head.forward_ws(&cache.g, &mut cache.head_ws)?;
        feature.copy_from_slice(cache.head_ws.output());
        Ok(())
    }

    /// Allocating convenience query.
    pub fn semantic_query(&self, p: Vec3<T>) -> Result<Vec<T>> {
        let mut cache = SemanticSampleCache::default();
        let mut feature = vec![T::zero(); self.semantic_channels()];
        self.sample(p, &mut feature, &mut cache)?;
        Ok(feature)
    }

    /// Backward through one sample: dL/d(semantic feature) onto head and
    /// grids.
    pub fn sample_backward(
        &self,
        cache: &mut SemanticSampleCache<T>,
        grad_feature: &[T],
        grads: &mut SemanticGrads<T>,
    ) {
        cache.grad_g.resize(self.grid_channels(), T::zero());
        self.head.backward_ws(
            grad_feature,
            &mut cache.head_ws,
            &mut grads.head,
            Some(&mut cache.grad_g),
        );
        scatter_grid_grads(
            &self.grids,
            &cache.blocks,
            &cache.grid_caches,
            &cache.grad_g,
            &mut cache.grad_g_scaled,
            &mut grads.grids,
        );
    }

    /// Order matches [`SemanticGrads::grid_slices`].
    pub fn grid_param_slices_mut(&mut self) -> Vec<&mut [T]> {
        grid_slices_mut(&mut self.grids)
    }

    /// Order matches [`SemanticGrads::mlp_slices`].
    pub fn mlp_param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.head.param_slices_mut()
    }

    pub fn n_params(&self) -> usize {
        self.grids.iter().map(|g| g.n_params()).sum::<usize>() + self.head.n_params()
    }
}

fn grid_slices_mut<T: Real>(grids: &mut [TriPlaneGrid<T>]) -> Vec<&mut [T]> {
    let mut out = Vec::with_capacity(grids.len() * 3);
    for g in grids {
        out.push(g.plane_xy.data_mut());
        out.push(g.plane_xz.data_mut());
        out.push(g.plane_yz.data_mut());
    }
    out
}

fn grid_grad_slices<T: Real>(grids: &[TriPlaneGridGrads<T>]) -> Vec<&[T]> {
    let mut out = Vec::with_capacity(grids.len() * 3);
    for g in grids {
        out.push(g.plane_xy.data());
        out.push(g.plane_xz.data());
        out.push(g.plane_yz.data());
    }
    out
}

/// Gradient buffers shaped like a [`SceneContentField`].
#[derive(Debug, Clone)]
pub struct ContentGrads<T> {
    pub grids: Vec<TriPlaneGridGrads<T>>,
    pub trunk: MlpGrads<T>,
    pub head: MlpGrads<T>,
}

impl<T: Real> ContentGrads<T> {
    pub fn zeros_like(f: &SceneContentField<T>) -> Self {
        ContentGrads {
            grids: f.grids.iter().map(TriPlaneGridGrads::zeros_like).collect(),
            trunk: MlpGrads::zeros_like(&f.trunk),
            head: MlpGrads::zeros_like(&f.head),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grids {
            g.zero();
        }
        self.trunk.zero();
        self.head.zero();
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.grids.iter_mut().zip(&other.grids) {
            a.add_assign(b);
        }
        self.trunk.add_assign(&other.trunk);
        self.head.add_assign(&other.head);
    }

    pub fn scale(&mut self, s: T) {
        for gr in &mut self.grids {
            for t in [&mut gr.plane_xy, &mut gr.plane_xz, &mut gr.plane_yz] {
                for v in t.data_mut() {
                    *v *= s;
                }
            }
        }
        self.trunk.scale(s);
        self.head.scale(s);
    }

    /// Order matches [`SceneContentField::grid_param_slices_mut`].
    pub fn grid_slices(&self) -> Vec<&[T]> {
        grid_grad_slices(&self.grids)
    }

    /// Order matches [`SceneContentField::mlp_param_slices_mut`].
    pub fn mlp_slices(&self) -> Vec<&[T]> {
        let mut out = self.trunk.slices();
        out.extend(self.head.slices());
        out
    }
}

/// Gradient buffers shaped like a [`SceneSemanticField`].
#[derive(Debug, Clone)]
pub struct SemanticGrads<T> {
    pub grids: Vec<TriPlaneGridGrads<T>>,
    pub head: MlpGrads<T>,
}

impl<T: Real> SemanticGrads<T> {
    pub fn zeros_like(f: &SceneSemanticField<T>) -> Self {
        SemanticGrads {
            grids: f.grids.iter().map(TriPlaneGridGrads::zeros_like).collect(),
            head: MlpGrads::zeros_like(&f.head),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grids {
            g.zero();
        }
        self.head.zero();
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.grids.iter_mut().zip(&other.grids) {
            a.add_assign(b);
        }
        self.head.add_assign(&other.head);
    }

    pub fn scale(&mut self, s: T) {
        for gr in &mut self.grids {
            for t in [&mut gr.plane_xy, &mut gr.plane_xz, &mut gr.plane_yz] {
                for v in t.data_mut() {
                    *v *= s;
                }
            }
        }
        self.head.scale(s);
    }

    /// Order matches [`SceneSemanticField::grid_param_slices_mut`].
    pub fn grid_slices(&self) -> Vec<&[T]> {
        grid_grad_slices(&self.grids)
    }

    /// Order matches [`SceneSemanticField::mlp_param_slices_mut`].
    pub fn mlp_slices(&self) -> Vec<&[T]> {
        self.head.slices()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aabb() -> Aabb<f64> {
        Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0))
    }

    /// Small two-block config so tests exercise the blend path.
    fn small_cfg() -> FieldConfig {
        FieldConfig {
            blocks: [2, 1, 1],
            overlap_frac: 0.2,
            content_resolution: [3, 3, 3],
            semantic_resolution: [3, 3, 3],
            grid_channels: 4,
            content_channels: 3,
            semantic_channels: 3,
            hidden: 6,
            n_freq: 2,
        }
    }

    fn content_field() -> SceneContentField<f64> {
        SceneContentField::init(aabb(), &small_cfg(), 11).unwrap()
    }

    fn semantic_field() -> SceneSemanticField<f64> {
        SceneSemanticField::init(aabb(), &small_cfg(), 11).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(content_field(), content_field());
        let other = SceneContentField::<f64>::init(aabb(), &small_cfg(), 12).unwrap();
        assert_ne!(content_field(), other);
    }

    #[test]
    fn density_is_view_independent_bitwise() {
        let f = content_field();
        let p = Vec3::new(0.3, -0.2, 0.7);
        let (s1, f1) = f
            .content_query(p, Vec3::new(1.0, 0.0, 0.0))
            .unwrap();
        let (s2, f2) = f
            .content_query(p, Vec3::new(0.0, 0.0, -1.0))
            .unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
        assert_ne!(f1, f2, "content feature should be view-dependent");
    }

    #[test]
    fn fresh_field_is_near_empty() {
        let f = content_field();
        for p in [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(-0.9, 0.4, 0.1),
            Vec3::new(0.5, -0.5, 0.8),
        ] {
            let (sigma, _) = f.content_query(p, Vec3::new(0.0, 1.0, 0.0)).unwrap();
            assert!(sigma < 0.1, "initial density should be tiny, got {sigma}");
        }
    }

    #[test]
    fn zeroed_field_density_is_ln_two_and_feature_constant() {
        let mut f = content_field();
        for s in f.grid_param_slices_mut() {
            s.fill(0.0);
        }
        for s in f.mlp_param_slices_mut() {
            s.fill(0.0);
        }
        let d = Vec3::new(0.6, 0.8, 0.0);
        let (s1, f1) = f.content_query(Vec3::new(0.1, 0.2, 0.3), d).unwrap();
        let (s2, f2) = f.content_query(Vec3::new(-0.7, 0.9, -0.4), d).unwrap();
        assert!((s1 - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(s1.to_bits(), s2.to_bits());
        assert_eq!(f1, f2, "zeroed grids make the feature position-independent");
    }

    #[test]
    fn semantic_zero_grids_give_constant_head_of_zero() {
        let mut f = semantic_field();
        for s in f.grid_param_slices_mut() {
            s.fill(0.0);
        }
        let a = f.semantic_query(Vec3::new(0.3, 0.3, 0.3)).unwrap();
        let b = f.semantic_query(Vec3::new(-0.8, 0.1, 0.9)).unwrap();
        assert_eq!(a, b);
        // Zero grid feature: the output is the head's pure bias chain.
        let mut ws = MlpWorkspace::new();
        f.head.forward_ws(&[0.0; 4], &mut ws).unwrap();
        assert_eq!(a.as_slice(), ws.output());
    }

    #[test]
    fn semantic_query_is_repeatable() {
        let f = semantic_field();
        let p = Vec3::new(0.25, -0.5, 0.125);
        let a = f.semantic_query(p).unwrap();
        let b = f.semantic_query(p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn queries_outside_the_volume_error() {
        let f = content_field();
        assert!(f
            .content_query(Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0))
            .is_err());
        let s = semantic_field();
        assert!(s.semantic_query(Vec3::new(0.0, -3.0, 0.0)).is_err());
    }

    #[test]
    fn non_unit_direction_errors() {
        let f = content_field();
        let err = f
            .content_query(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0))
            .unwrap_err();
        assert!(err.to_string().contains("unit length"), "{err}");
    }

    /// Gradients with a skipped feature phase must equal gradients with an
    /// explicit zero feature gradient: both describe the same function of
    /// the parameters.
    #[test]
    fn skipped_feature_equals_zero_feature_grad() {
        let f = content_field();
        let p = Vec3::new(0.05, 0.4, -0.3); // inside the x blend ramp
        let dir = Vec3::new(0.0, 0.6, 0.8);

        let mut cache = ContentSampleCache::default();
        f.sample_density(p, &mut cache).unwrap();
        let mut feat = vec![0.0; f.content_channels()];
        f.sample_feature(dir, &mut feat, &mut cache).unwrap();
        let mut ga = ContentGrads::zeros_like(&f);
        f.sample_backward(&mut cache, 1.25, Some(&vec![0.0; 3]), &mut ga);

        let mut cache_b = ContentSampleCache::default();
        f.sample_density(p, &mut cache_b).unwrap();
        let mut gb = ContentGrads::zeros_like(&f);
        f.sample_backward(&mut cache_b, 1.25, None, &mut gb);

        for (a, b) in ga.grid_slices().iter().zip(gb.grid_slices()) {
            assert_eq!(a, &b);
        }
        for (a, b) in ga.mlp_slices().iter().zip(gb.mlp_slices()) {
            assert_eq!(a, &b);
        }
    }

    /// Full finite-difference check through grids, trunk and head, at a
    /// point inside the block blend ramp so several grids contribute.
    #[test]
    fn content_gradients_match_finite_differences() {
        let f = content_field();
        let p = Vec3::new(0.05, 0.4, -0.3);
        let dir = Vec3::new(0.0, 0.6, 0.8);
        let a_sigma = 0.9;
        let c_feat = [0.7, -1.1, 0.4];

        let loss = |f: &SceneContentField<f64>| -> f64 {
            let (sigma, feat) = f.content_query(p, dir).unwrap();
            a_sigma * sigma + feat.iter().zip(c_feat).map(|(v, c)| v * c).sum::<f64>()
        };

        let mut cache = ContentSampleCache::default();
        f.sample_density(p, &mut cache).unwrap();
        let mut feat = vec![0.0; 3];
        f.sample_feature(dir, &mut feat, &mut cache).unwrap();
        let mut grads = ContentGrads::zeros_like(&f);
        f.sample_backward(&mut cache, a_sigma, Some(&c_feat), &mut grads);

        let h = 1e-6;
        let n_groups = {
            let mut fc = f.clone();
            fc.grid_param_slices_mut().len() + fc.mlp_param_slices_mut().len()
        };
        let grad_slices: Vec<Vec<f64>> = grads
            .grid_slices()
            .iter()
            .chain(grads.mlp_slices().iter())
            .map(|s| s.to_vec())
            .collect();
        assert_eq!(grad_slices.len(), n_groups);
        for (gi, gslice) in grad_slices.iter().enumerate() {
            for k in 0..gslice.len() {
                let mut fp = f.clone();
                let mut fm = f.clone();
                perturb(&mut fp, gi, k, h);
                perturb(&mut fm, gi, k, -h);
                let fd = (loss(&fp) - loss(&fm)) / (2.0 * h);
                let an = gslice[k];
                assert!(
                    (fd - an).abs() <= 1e-7 + 1e-5 * fd.abs().max(an.abs()),
                    "group {gi} entry {k}: fd {fd} vs analytic {an}"
                );
            }
        }

        fn perturb(f: &mut SceneContentField<f64>, group: usize, k: usize, h: f64) {
            let mut slices = f.grid_param_slices_mut();
            // grid groups come first, then trunk/head groups.
            if group < slices.len() {
                slices[group][k] += h;
                return;
            }
            let grid_groups = slices.len();
            drop(slices);
            let mut mlp = f.mlp_param_slices_mut();
            mlp[group - grid_groups][k] += h;
        }
    }

    #[test]
    fn semantic_gradients_match_finite_differences() {
        let f = semantic_field();
        let p = Vec3::new(-0.02, 0.15, 0.6); // inside the x blend ramp
        let c_feat = [0.3, 1.2, -0.8];

        let loss = |f: &SceneSemanticField<f64>| -> f64 {
            let out = f.semantic_query(p).unwrap();
            out.iter().zip(c_feat).map(|(v, c)| v * c).sum()
        };

        let mut cache = SemanticSampleCache::default();
        let mut feat = vec![0.0; 3];
        f.sample(p, &mut feat, &mut cache).unwrap();
        let mut grads = SemanticGrads::zeros_like(&f);
        f.sample_backward(&mut cache, &c_feat, &mut grads);

        let h = 1e-6;
        let grad_slices: Vec<Vec<f64>> = grads
            .grid_slices()
            .iter()
            .chain(grads.mlp_slices().iter())
            .map(|s| s.to_vec())
            .collect();
        for (gi, gslice) in grad_slices.iter().enumerate() {
            for k in 0..gslice.len() {
                let mut fp = f.clone();
                let mut fm = f.clone();
                perturb(&mut fp, gi, k, h);
                perturb(&mut fm, gi, k, -h);
                let fd = (loss(&fp) - loss(&fm)) / (2.0 * h);
                let an = gslice[k];
                assert!(
                    (fd - an).abs() <= 1e-7 + 1e-5 * fd.abs().max(an.abs()),
                    "group {gi} entry {k}: fd {fd} vs analytic {an}"
                );
            }
        }

        fn perturb(f: &mut SceneSemanticField<f64>, group: usize, k: usize, h: f64) {
            let mut slices = f.grid_param_slices_mut();
            if group < slices.len() {
                slices[group][k] += h;
                return;
            }
            let grid_groups = slices.len();
            drop(slices);
            let mut mlp = f.mlp_param_slices_mut();
            mlp[group - grid_groups][k] += h;
        }
    }

    /// Dense sampling along a line crossing the block seam: the blended grid
    /// feature must stay continuous — no step may jump far above the typical
    /// step-to-step variation.
    #[test]
    fn seam_crossing_keeps_blended_feature_continuous() {
        let f = content_field();
        let n = 2000;
        let mut cache = ContentSampleCache::default();
        let mut prev: Option<Vec<f64>> = None;
        let mut jumps = Vec::with_capacity(n);
        for k in 0..=n {
            let t = k as f64 / n as f64;
            // A slanted path through the x = 0 seam.
            let p = Vec3::new(-0.6 + 1.2 * t, -0.4 + 0.5 * t, 0.3 - 0.4 * t);
            f.sample_density(p, &mut cache).unwrap();
            let g = cache.g.clone();
            if let Some(prev) = &prev {
                let jump = g
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                jumps.push(jump);
            }
            prev = Some(g);
        }
        let mut sorted = jumps.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let max = *sorted.last().unwrap();
        assert!(
            max < 10.0 * median,
            "seam discontinuity: max jump {max} vs median {median}"
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = small_cfg();
        cfg.content_resolution = [1, 3, 3];
        assert!(SceneContentField::<f64>::init(aabb(), &cfg, 0).is_err());
        let mut cfg = small_cfg();
        cfg.overlap_frac = 0.5;
        assert!(SceneContentField::<f64>::init(aabb(), &cfg, 0).is_err());
        let mut cfg = small_cfg();
        cfg.grid_channels = 0;
        assert!(SceneSemanticField::<f64>::init(aabb(), &cfg, 0).is_err());
    }
}
