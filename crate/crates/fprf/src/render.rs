//! Pinhole cameras, ray sampling, and emission–absorption volume rendering
//! of colors, feature vectors, and expected depth.
//!
//! The quadrature follows the usual discrete transmittance form: sample `i`
//! absorbs `α_i = 1 − exp(−σ_i δ_i)` of the light still travelling, so its
//! compositing weight is `w_i = T_i α_i` with `T_{i+1} = T_i e^{−σ_i δ_i}`.
//! The same accumulation renders per-sample colors (decode-then-render) and
//! raw feature vectors; the backward pass is hand-derived and checked
//! against finite differences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::decoder::ColorDecoder;
use crate::error::{Error, Result};
use crate::field::{
    ContentSampleCache, SceneContentField, SceneSemanticField, SemanticSampleCache,
};
use crate::geom::{Mat3, Vec3};
use crate::math::MlpWorkspace;
use crate::scalar::{axpy, derive_seed, dot, Real};
use crate::tensor::Tensor;

/// Pinhole camera: intrinsics in pixels, a rigid camera-to-world pose, and
/// the sampling range along rays.
///
/// Conventions: `+z` is the camera's forward axis, `x` points right, `y`
/// points down; pixel `(u, v)` is column `u` of row `v` and its ray passes
/// through the pixel center `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world rotation.
    pub rotation: Mat3<T>,
    /// Camera center in world coordinates.
    pub translation: Vec3<T>,
    pub near: T,
    pub far: T,
}

impl<T: Real> CameraModel<T> {
    /// Builds a camera from a 4×4 row-major camera-to-world pose.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        pose: &[[T; 4]; 4],
        near: T,
        far: T,
    ) -> Result<Self> {
        if fx <= T::zero() || fy <= T::zero() {
            return Err(Error::invalid(
                "CameraModel::new",
                format!("focal lengths must be positive, got ({}, {})", fx.as_f64(), fy.as_f64()),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("CameraModel::new", "image size must be ≥ 1"));
        }
        if near >= far {
            return Err(Error::invalid(
                "CameraModel::new",
                format!("need near < far, got {} ≥ {}", near.as_f64(), far.as_f64()),
            ));
        }
        for (j, &want) in [T::zero(), T::zero(), T::zero(), T::one()].iter().enumerate() {
            if (pose[3][j] - want).abs() > T::of(1e-6) {
                return Err(Error::invalid(
                    "CameraModel::new",
                    "pose bottom row must be (0, 0, 0, 1)",
                ));
            }
        }
        let rotation = Mat3::from_columns(
            Vec3::new(pose[0][0], pose[1][0], pose[2][0]),
            Vec3::new(pose[0][1], pose[1][1], pose[2][1]),
            Vec3::new(pose[0][2], pose[1][2], pose[2][2]),
        );
        let err = rotation.orthonormality_error();
        if err > T::of(1e-5) {
            return Err(Error::invalid(
                "CameraModel::new",
                format!("rotation not orthonormal (error {})", err.as_f64()),
            ));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation: Vec3::new(pose[0][3], pose[1][3], pose[2][3]),
            near,
            far,
        })
    }

    /// The 4×4 row-major camera-to-world pose.
    pub fn pose_matrix(&self) -> [[T; 4]; 4] {
        let r = &self.rotation;
        let t = self.translation;
        let z = T::zero();
        [
            [r.column(0).x, r.column(1).x, r.column(2).x, t.x],
            [r.column(0).y, r.column(1).y, r.column(2).y, t.y],
            [r.column(0).z, r.column(1).z, r.column(2).z, t.z],
            [z, z, z, T::one()],
        ]
    }

    /// World ray through the center of pixel `(u, v)`.
    pub fn ray_for_pixel(&self, u: usize, v: usize) -> Result<Ray<T>> {
        if u >= self.width || v >= self.height {
            return Err(Error::invalid(
                "generate_rays",
                format!(
                    "pixel ({u}, {v}) outside {}×{} image",
                    self.width, self.height
                ),
            ));
        }
        let half = T::of(0.5);
        let dir_cam = Vec3::new(
            (T::of_usize(u) + half - self.cx) / self.fx,
            (T::of_usize(v) + half - self.cy) / self.fy,
            T::one(),
        );
        Ok(Ray {
            origin: self.translation,
            dir: self.rotation.mul_vec(dir_cam).normalized(),
            pixel: (u, v),
        })
    }

    /// Projects a world point: continuous pixel coordinates (the ray of
    /// pixel `(u, v)` projects back to exactly `(u+0.5, v+0.5)`) and the
    /// camera-space depth. `None` behind the camera.
    pub fn project(&self, p: Vec3<T>) -> Option<(T, T, T)> {
        let q = self.rotation.transpose().mul_vec(p - self.translation);
        if q.z <= T::zero() {
            return None;
        }
        Some((
            self.fx * q.x / q.z + self.cx,
            self.fy * q.y / q.z + self.cy,
            q.z,
        ))
    }

    pub fn cast<U: Real>(&self) -> CameraModel<U> {
        CameraModel {
            fx: U::of(self.fx.as_f64()),
            fy: U::of(self.fy.as_f64()),
            cx: U::of(self.cx.as_f64()),
            cy: U::of(self.cy.as_f64()),
            width: self.width,
            height: self.height,
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
            near: U::of(self.near.as_f64()),
            far: U::of(self.far.as_f64()),
        }
    }
}

/// A world-space ray tagged with the pixel it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    /// Unit direction.
    pub dir: Vec3<T>,
    /// `(u, v)` pixel indices.
    pub pixel: (usize, usize),
}

/// Rays through the centers of the listed pixels.
pub fn generate_rays<T: Real>(
    cam: &CameraModel<T>,
    pixels: &[(usize, usize)],
) -> Result<Vec<Ray<T>>> {
    pixels.iter().map(|&(u, v)| cam.ray_for_pixel(u, v)).collect()
}

/// Quadrature points along one ray: world positions, parametric depths, and
/// the segment lengths `δ_i = t_{i+1} − t_i` (the last one capped by `far`).
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples<T> {
    pub points: Vec<Vec3<T>>,
    pub t: Vec<T>,
    pub delta: Vec<T>,
}

impl<T: Real> RaySamples<T> {
    pub fn new() -> Self {
        RaySamples {
            points: Vec::new(),
            t: Vec::new(),
            delta: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

impl<T: Real> Default for RaySamples<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Fills `out` with `k` samples in `[near, far]`: uniform bins, midpoints
/// when `jitter` is `None`, otherwise one uniform draw per bin.
pub fn sample_along_ray_into<T: Real>(
    ray: &Ray<T>,
    near: T,
    far: T,
    k: usize,
    mut jitter: Option<&mut ChaCha8Rng>,
    out: &mut RaySamples<T>,
) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("sample_along_ray", "need K ≥ 1 samples"));
    }
    if near >= far {
        return Err(Error::invalid(
            "sample_along_ray",
            format!("need near < far, got {} ≥ {}", near.as_f64(), far.as_f64()),
        ));
    }
    out.points.clear();
    out.t.clear();
    out.delta.clear();
    let bin = (far - near) / T::of_usize(k);
    for i in 0..k {
        let xi = match jitter.as_deref_mut() {
            Some(rng) => T::of(rng.random_range(0.0..1.0)),
            None => T::of(0.5),
        };
        let t = near + bin * (T::of_usize(i) + xi);
        out.t.push(t);
        out.points.push(ray.origin + ray.dir * t);
    }
    for i in 0..k {
        let next = if i + 1 < k { out.t[i + 1] } else { far };
        out.delta.push(next - out.t[i]);
    }
    Ok(())
}

/// Allocating wrapper over [`sample_along_ray_into`]; stratified draws come
/// from a ChaCha8 stream on `seed`.
pub fn sample_along_ray<T: Real>(
    ray: &Ray<T>,
    near: T,
    far: T,
    k: usize,
    stratified: bool,
    seed: u64,
) -> Result<RaySamples<T>> {
    let mut out = RaySamples::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = stratified.then_some(&mut rng);
    sample_along_ray_into(ray, near, far, k, jitter, &mut out)?;
    Ok(out)
}

/// Samples with compositing weight at or below this threshold skip feature
/// decoding everywhere (rendering, stylization, training); their
/// contribution is exactly zero in the skipped-forward function, so the
/// shortcut stays differentiable.
pub const SKIP_WEIGHT_EPS: f64 = 1e-8;

fn check_sigmas_deltas<T: Real>(sigmas: &[T], deltas: &[T]) -> Result<()> {
    if sigmas.len() != deltas.len() {
        return Err(Error::shape(
            "volume_render",
            format!("{} sigmas vs {} deltas", sigmas.len(), deltas.len()),
        ));
    }
    if let Some(s) = sigmas.iter().find(|s| **s < T::zero()) {
        return Err(Error::invalid(
            "volume_render",
            format!("negative sigma {}", s.as_f64()),
        ));
    }
    if let Some(d) = deltas.iter().find(|d| **d < T::zero()) {
        return Err(Error::invalid(
            "volume_render",
            format!("negative delta {}", d.as_f64()),
        ));
    }
    Ok(())
}

/// Core quadrature: accumulates `out += Σ w_i · values[i]` over rows of
/// `values` (`k·c` flattened), writes the weights, and returns the
/// transmittance left after the last sample. `out` must arrive zeroed.
pub fn volume_render_into<T: Real>(
    values: &[T],
    sigmas: &[T],
    deltas: &[T],
    c: usize,
    out: &mut [T],
    weights: &mut [T],
) -> Result<T> {
    check_sigmas_deltas(sigmas, deltas)?;
    let k = sigmas.len();
    if values.len() != k * c || out.len() != c || weights.len() != k {
        return Err(Error::shape(
            "volume_render",
            format!(
                "values {} / out {} / weights {} vs K={k}, C={c}",
                values.len(),
                out.len(),
                weights.len()
            ),
        ));
    }
    let mut trans = T::one();
    for i in 0..k {
        let e = (-(sigmas[i] * deltas[i])).exp();
        let w = trans * (T::one() - e);
        weights[i] = w;
        axpy(w, &values[i * c..(i + 1) * c], out);
        trans *= e;
    }
    Ok(trans)
}

/// Volume rendering of per-sample value rows `[K × C]`: the accumulated
/// value, the per-sample weights, and the final transmittance.
pub fn volume_render<T: Real>(
    values: &Tensor<T>,
    sigmas: &[T],
    deltas: &[T],
) -> Result<(Vec<T>, Vec<T>, T)> {
    if values.rank() != 2 || values.rows() != sigmas.len() {
        return Err(Error::shape(
            "volume_render",
            format!("values {:?} vs K = {}", values.shape(), sigmas.len()),
        ));
    }
    let c = values.shape()[1];
    let mut out = vec![T::zero(); c];
    let mut weights = vec![T::zero(); sigmas.len()];
    let trans = volume_render_into(values.data(), sigmas, deltas, c, &mut out, &mut weights)?;
    Ok((out, weights, trans))
}

/// Gradients of the quadrature output with respect to per-sample values and
/// densities. `scratch` is resized internally (holds transmittances).
///
/// For sample `i` with upstream `g`: `∂L/∂v_i = w_i·g`, and
/// `∂L/∂σ_i = δ_i·(T_{i+1}·⟨g, v_i⟩ − Σ_{j>i} w_j·⟨g, v_j⟩)` — raising σ_i
/// absorbs more at `i` and shades everything behind it.
pub fn volume_render_backward_into<T: Real>(
    values: &[T],
    sigmas: &[T],
    deltas: &[T],
    c: usize,
    grad_out: &[T],
    grad_values: &mut [T],
    grad_sigmas: &mut [T],
    scratch: &mut Vec<T>,
) -> Result<()> {
    check_sigmas_deltas(sigmas, deltas)?;
    let k = sigmas.len();
    if values.len() != k * c
        || grad_out.len() != c
        || grad_values.len() != k * c
        || grad_sigmas.len() != k
    {
        return Err(Error::shape(
            "volume_render_backward",
            format!("buffer sizes disagree with K={k}, C={c}"),
        ));
    }
    // Forward pass: weights (reusing grad_sigmas as storage) and T_{i+1}.
    scratch.clear();
    scratch.resize(k, T::zero());
    let mut trans = T::one();
    for i in 0..k {
        let e = (-(sigmas[i] * deltas[i])).exp();
        grad_sigmas[i] = trans * (T::one() - e); // w_i, rewritten below
        trans *= e;
        scratch[i] = trans; // T_{i+1}
    }
    // Reverse pass with the suffix sum S_i = Σ_{j>i} w_j ⟨g, v_j⟩.
    let mut suffix = T::zero();
    for i in (0..k).rev() {
        let w = grad_sigmas[i];
        let row = &values[i * c..(i + 1) * c];
        let p = dot(grad_out, row);
        for ch in 0..c {
            grad_values[i * c + ch] = w * grad_out[ch];
        }
        grad_sigmas[i] = deltas[i] * (scratch[i] * p - suffix);
        suffix += w * p;
    }
    Ok(())
}

/// Allocating wrapper over [`volume_render_backward_into`].
pub fn volume_render_backward<T: Real>(
    values: &Tensor<T>,
    sigmas: &[T],
    deltas: &[T],
    grad_out: &[T],
) -> Result<(Tensor<T>, Vec<T>)> {
    if values.rank() != 2 || values.rows() != sigmas.len() {
        return Err(Error::shape(
            "volume_render_backward",
            format!("values {:?} vs K = {}", values.shape(), sigmas.len()),
        ));
    }
    let c = values.shape()[1];
    let mut grad_values = Tensor::zeros(values.shape());
    let mut grad_sigmas = vec![T::zero(); sigmas.len()];
    let mut scratch = Vec::new();
    volume_render_backward_into(
        values.data(),
        sigmas,
        deltas,
        c,
        grad_out,
        grad_values.data_mut(),
        &mut grad_sigmas,
        &mut scratch,
    )?;
    Ok((grad_values, grad_sigmas))
}

/// Minimum accumulated weight for a pixel to carry a meaningful depth.
pub const DEPTH_VALID_MIN_WEIGHT: f64 = 0.01;

/// Expected depth along one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample<T> {
    pub depth: T,
    /// False for background pixels (accumulated weight below 0.01).
    pub valid: bool,
}

/// Expected depth `Σ w_i t_i / max(Σ w_i, ε)` with a background validity
/// flag.
pub fn render_depth<T: Real>(weights: &[T], t: &[T]) -> DepthSample<T> {
    debug_assert_eq!(weights.len(), t.len());
    let mut wsum = T::zero();
    let mut wt = T::zero();
    for (&w, &ti) in weights.iter().zip(t) {
        wsum += w;
        wt += w * ti;
    }
    DepthSample {
        depth: wt / wsum.max(T::of(1e-8)),
        valid: wsum >= T::of(DEPTH_VALID_MIN_WEIGHT),
    }
}

/// What [`render_image`] writes per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Per-sample feature → decoded RGB → accumulate; `[H × W × 3]`.
    Color,
    /// Accumulated raw content features; `[H × W × C_V]`.
    ContentFeature,
    /// Accumulated semantic features under content density; `[H × W × C_D]`.
    SemanticFeature,
    /// Expected depth and validity; `[H × W × 2]`.
    Depth,
}

/// Per-thread scratch for one row of rendering.
struct RowScratch<T> {
    samples: RaySamples<T>,
    caches: Vec<ContentSampleCache<T>>,
    sem_cache: SemanticSampleCache<T>,
    sigmas: Vec<T>,
    weights: Vec<T>,
    feature: Vec<T>,
    rgb: Vec<T>,
    ws: MlpWorkspace<T>,
}

impl<T: Real> RowScratch<T> {
    fn new() -> Self {
        RowScratch {
            samples: RaySamples::new(),
            caches: Vec::new(),
            sem_cache: SemanticSampleCache::default(),
            sigmas: Vec::new(),
            weights: Vec::new(),
            feature: Vec::new(),
            rgb: vec![T::zero(); 3],
            ws: MlpWorkspace::new(),
        }
    }
}

/// Renders a full image with deterministic midpoint sampling (`k` samples
/// per ray). The semantic mode composites semantic features under the
/// content field's density; depth mode writes `(depth, valid)` planes.
pub fn render_image<T: Real>(
    content: &SceneContentField<T>,
    semantic: Option<&SceneSemanticField<T>>,
    cam: &CameraModel<T>,
    mode: RenderMode,
    decoder: Option<&ColorDecoder<T>>,
    k: usize,
) -> Result<Tensor<T>> {
    let out_c = match mode {
        RenderMode::Color => {
            let dec = decoder.ok_or_else(|| {
                Error::invalid("render_image", "color mode requires a decoder")
            })?;
            if dec.content_channels() != content.content_channels() {
                return Err(Error::shape(
                    "render_image",
                    format!(
                        "decoder expects {} feature channels, field provides {}",
                        dec.content_channels(),
                        content.content_channels()
                    ),
                ));
            }
            3
        }
        RenderMode::ContentFeature => content.content_channels(),
        RenderMode::SemanticFeature => semantic
            .ok_or_else(|| {
                Error::invalid("render_image", "semantic mode requires the semantic field")
            })?
            .semantic_channels(),
        RenderMode::Depth => 2,
    };
    if k == 0 {
        return Err(Error::invalid("render_image", "need K ≥ 1 samples"));
    }
    let (h, w) = (cam.height, cam.width);
    let mut image = Tensor::zeros(&[h, w, out_c]);

    let rows: Vec<(usize, &mut [T])> = image
        .data_mut()
        .chunks_mut(w * out_c)
        .enumerate()
        .collect();
    rows.into_par_iter().try_for_each(|(v, row)| -> Result<()> {
        let mut scratch = RowScratch::<T>::new();
        for u in 0..w {
            let ray = cam.ray_for_pixel(u, v)?;
            let px = &mut row[u * out_c..(u + 1) * out_c];
            render_pixel(
                content,
                semantic,
                decoder,
                &ray,
                cam.near,
                cam.far,
                k,
                mode,
                px,
                &mut scratch,
            )?;
        }
        Ok(())
    })?;
    Ok(image)
}

#[allow(clippy::too_many_arguments)]
fn render_pixel<T: Real>(
    content: &SceneContentField<T>,
    semantic: Option<&SceneSemanticField<T>>,
    decoder: Option<&ColorDecoder<T>>,
    ray: &Ray<T>,
    near: T,
    far: T,
    k: usize,
    mode: RenderMode,
    out: &mut [T],
    s: &mut RowScratch<T>,
) -> Result<()> {
    sample_along_ray_into(ray, near, far, k, None, &mut s.samples)?;
    while s.caches.len() < k {
        s.caches.push(ContentSampleCache::default());
    }
    s.sigmas.clear();
    // Density pass; points outside the scene box are empty space.
    let aabb = &content.layout.aabb;
    for i in 0..k {
        let p = s.samples.points[i];
        let sigma = if aabb.contains(p) {
            content.sample_density(p, &mut s.caches[i])?
        } else {
            T::zero()
        };
        s.sigmas.push(sigma);
    }
    s.weights.clear();
    s.weights.resize(k, T::zero());
    let mut trans = T::one();
    for i in 0..k {
        let e = (-(s.sigmas[i] * s.samples.delta[i])).exp();
        s.weights[i] = trans * (T::one() - e);
        trans *= e;
    }

    if mode == RenderMode::Depth {
        let d = render_depth(&s.weights, &s.samples.t);
        out[0] = d.depth;
        out[1] = if d.valid { T::one() } else { T::zero() };
        return Ok(());
    }

    // Feature pass over contributing samples only.
    out.fill(T::zero());
    let skip = T::of(SKIP_WEIGHT_EPS);
    for i in 0..k {
        let wgt = s.weights[i];
        if wgt <= skip {
            continue;
        }
        match mode {
            RenderMode::Color => {
                s.feature.resize(content.content_channels(), T::zero());
                content.sample_feature(ray.dir, &mut s.feature, &mut s.caches[i])?;
                decoder
                    .expect("checked by render_image")
                    .decode_row(&s.feature, &mut s.rgb, &mut s.ws)?;
                axpy(wgt, &s.rgb, out);
            }
            RenderMode::ContentFeature => {
                s.feature.resize(content.content_channels(), T::zero());
                content.sample_feature(ray.dir, &mut s.feature, &mut s.caches[i])?;
                axpy(wgt, &s.feature, out);
            }
            RenderMode::SemanticFeature => {
                let sem = semantic.expect("checked by render_image");
                s.feature.resize(sem.semantic_channels(), T::zero());
                sem.sample(s.samples.points[i], &mut s.feature, &mut s.sem_cache)?;
                axpy(wgt, &s.feature, out);
            }
            RenderMode::Depth => unreachable!(),
        }
    }
    Ok(())
}

/// Deterministic per-ray seed for stratified training batches.
pub fn ray_seed(batch_seed: u64, ray_index: u64) -> u64 {
    derive_seed(batch_seed, ray_index)
}
