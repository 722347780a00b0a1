//! Scene optimization: Adam, total-variation regularization, the content
//! and semantic distillation losses, and the single-stage training loop.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SceneDataset;
use crate::decoder::{ColorDecoder, ContentStats};
use crate::encoder::{upsample_to_pixels, Encoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::field::{
    ContentGrads, ContentSampleCache, FieldConfig, SceneContentField, SceneSemanticField,
    SemanticGrads, SemanticSampleCache, TriPlaneGrid, TriPlaneGridGrads,
};
use crate::math::{MlpGrads, MlpWorkspace};
use crate::render::{
    render_image, sample_along_ray_into, volume_render_backward_into, Ray, RaySamples, RenderMode,
    SKIP_WEIGHT_EPS,
};
use crate::scalar::{axpy, derive_seed, Real};
use crate::tensor::Tensor;

/// Adam hyper-parameters for one parameter group.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment buffers mirroring a fixed list of parameter slices,
/// plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new_like(params: &[&[T]]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. `params` and `grads` must list the
    /// same slices, in the same order, as the `new_like` call.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [&mut [T]],
        grads: &[&[T]],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "expected {} parameter groups, got {} params / {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "group {i}: state has {} values, got {} params / {} grads",
                        self.m[i].len(),
                        p.len(),
                        g.len()
                    ),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.len() {
                let gk = g[k].as_f64();
                let mk = cfg.beta1 * m[k].as_f64() + (1.0 - cfg.beta1) * gk;
                let vk = cfg.beta2 * v[k].as_f64() + (1.0 - cfg.beta2) * gk * gk;
                m[k] = T::of(mk);
                v[k] = T::of(vk);
                let update = cfg.lr * (mk / bc1) / ((vk / bc2).sqrt() + cfg.eps);
                p[k] = T::of(p[k].as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Total-variation regularizer over tri-plane grids: the mean squared
/// difference of axis-adjacent cells across every plane of every grid.
///
/// Returns the (unscaled) regularizer value and accumulates
/// `scale · ∂L/∂plane` into `grads`, so callers fold it into a larger loss
/// with `scale = λ_reg`.
pub fn tv_regularizer<T: Real>(
    grids: &[TriPlaneGrid<T>],
    scale: T,
    grads: &mut [TriPlaneGridGrads<T>],
) -> Result<T> {
    if grids.len() != grads.len() {
        return Err(Error::shape(
            "tv_regularizer",
            format!("{} grids vs {} grad buffers", grids.len(), grads.len()),
        ));
    }
    // First pass: count adjacent pairs so the mean's normalizer is global.
    let mut n_pairs = 0usize;
    for g in grids {
        for plane in g.planes() {
            let (a, b, c) = (plane.shape()[0], plane.shape()[1], plane.shape()[2]);
            n_pairs += ((a - 1) * b + a * (b - 1)) * c;
        }
    }
    if n_pairs == 0 {
        return Ok(T::zero());
    }
    let inv_n = 1.0 / n_pairs as f64;
    let mut total = 0.0f64;
    for (g, gr) in grids.iter().zip(grads.iter_mut()) {
        for (plane, grad_plane) in g.planes().into_iter().zip(gr.planes_mut()) {
            let (a, b, c) = (plane.shape()[0], plane.shape()[1], plane.shape()[2]);
            let data = plane.data();
            let gdata = grad_plane.data_mut();
            let idx = |i: usize, j: usize, ch: usize| (i * b + j) * c + ch;
            for i in 0..a {
                for j in 0..b {
                    for ch in 0..c {
                        let x = data[idx(i, j, ch)].as_f64();
                        if i + 1 < a {
                            let y = data[idx(i + 1, j, ch)].as_f64();
                            let d = x - y;
                            total += d * d;
                            let gd = scale * T::of(2.0 * d * inv_n);
                            gdata[idx(i, j, ch)] += gd;
                            gdata[idx(i + 1, j, ch)] -= gd;
                        }
                        if j + 1 < b {
                            let y = data[idx(i, j + 1, ch)].as_f64();
                            let d = x - y;
                            total += d * d;
                            let gd = scale * T::of(2.0 * d * inv_n);
                            gdata[idx(i, j, ch)] += gd;
                            gdata[idx(i, j + 1, ch)] -= gd;
                        }
                    }
                }
            }
        }
    }
    Ok(T::of(total * inv_n))
}

/// Schedule and loss weights for the single-stage scene optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub rays_per_batch: usize,
    /// Quadrature samples per ray.
    pub k_samples: usize,
    /// Adam learning rate for the tri-plane grids.
    pub lr_grids: f64,
    /// Adam learning rate for trunk/head MLPs.
    pub lr_mlps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the RGB reconstruction term.
    pub lambda_rgb: f64,
    /// Weight of the total-variation regularizer (content grids only).
    pub lambda_reg: f64,
    /// EMA decay for the running content-feature statistics.
    pub stats_decay: f64,
    pub seed: u64,
    /// Steps between held-out PSNR probes in the report (0 disables).
    pub heldout_every: usize,
    /// Trains the color decoder alongside the fields (ablation only; the
    /// production path keeps the pretrained decoder frozen).
    pub learn_decoder: bool,
}

impl Default for TrainConfig {
    /// Calibrated for a desk-scale capture on one CPU core: 32 views at
    /// 64×64 with the default field reach ~28 dB held-out PSNR in about a
    /// minute. Larger captures want more steps and rays, not different
    /// rates.
    fn default() -> Self {
        TrainConfig {
            steps: 1500,
            rays_per_batch: 1024,
            k_samples: 32,
            lr_grids: 5e-3,
            lr_mlps: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda_rgb: 1.0,
            lambda_reg: 1e-3,
            stats_decay: 0.99,
            seed: 0,
            heldout_every: 500,
            learn_decoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("TrainConfig::validate", detail));
        if self.steps == 0 || self.rays_per_batch == 0 || self.k_samples == 0 {
            return bad(format!(
                "steps/rays_per_batch/k_samples must be positive, got {}/{}/{}",
                self.steps, self.rays_per_batch, self.k_samples
            ));
        }
        if self.lr_grids <= 0.0 || self.lr_mlps <= 0.0 {
            return bad(format!(
                "learning rates must be positive, got {}/{}",
                self.lr_grids, self.lr_mlps
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.lambda_rgb < 0.0 || self.lambda_reg < 0.0 {
            return bad(format!(
                "loss weights must be non-negative, got λ_rgb={} λ_reg={}",
                self.lambda_rgb, self.lambda_reg
            ));
        }
        if !(0.0..1.0).contains(&self.stats_decay) {
            return bad(format!("stats_decay must lie in [0, 1), got {}", self.stats_decay));
        }
        Ok(())
    }

    pub fn adam_grids(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_grids,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn adam_mlps(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_mlps,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One optimization batch: rays plus per-ray ground-truth targets gathered
/// from the dataset views.
#[derive(Debug, Clone)]
pub struct RayBatch<T> {
    pub rays: Vec<Ray<T>>,
    pub near: T,
    pub far: T,
    /// Jittered quadrature when true (training); bin midpoints otherwise.
    pub stratified: bool,
    /// Ray `i` draws its jitter from `derive_seed(seed, i)`.
    pub seed: u64,
    /// Ground-truth colors `[R × 3]`.
    pub color: Option<Tensor<T>>,
    /// Pixel-resolution content-feature targets `[R × C_V]`.
    pub content: Option<Tensor<T>>,
    /// Refined semantic-feature targets `[R × C_D]`.
    pub semantic: Option<Tensor<T>>,
}

impl<T: Real> RayBatch<T> {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    fn target<'a>(
        &self,
        which: &'static str,
        t: &'a Option<Tensor<T>>,
        cols: usize,
    ) -> Result<&'a Tensor<T>> {
        let t = t.as_ref().ok_or_else(|| {
            Error::invalid("RayBatch", format!("missing {which} targets"))
        })?;
        if t.rank() != 2 || t.rows() != self.rays.len() || t.shape()[1] != cols {
            return Err(Error::shape(
                "RayBatch",
                format!(
                    "{which} targets {:?} vs {} rays × {cols} channels",
                    t.shape(),
                    self.rays.len()
                ),
            ));
        }
        Ok(t)
    }
}

/// Rays per parallel work unit. Fixed (rather than derived from the thread
/// count) so gradient reductions are bit-identical on any machine.
pub const TRAIN_CHUNK: usize = 64;

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(TRAIN_CHUNK))
        .map(|c| (c * TRAIN_CHUNK, ((c + 1) * TRAIN_CHUNK).min(n)))
        .collect()
}

/// Per-worker buffers reused across the rays of one chunk.
struct ContentScratch<T> {
    samples: RaySamples<T>,
    caches: Vec<ContentSampleCache<T>>,
    sigmas: Vec<T>,
    weights: Vec<T>,
    inbox: Vec<bool>,
    kept: Vec<bool>,
    /// Per-sample rows `[feature ‖ decoded color]`, zero for skipped samples.
    vals: Vec<T>,
    dec_ws: Vec<MlpWorkspace<T>>,
    dec_grads: MlpGrads<T>,
    out: Vec<T>,
    grad_out: Vec<T>,
    grad_vals: Vec<T>,
    grad_sigmas: Vec<T>,
    trans_scratch: Vec<T>,
    grad_feat: Vec<T>,
    grad_feat_dec: Vec<T>,
}

struct ContentChunkOut<T> {
    loss: T,
    grads: ContentGrads<T>,
    /// Rendered feature rows (for the running statistics), chunk-local.
    feats: Vec<T>,
    /// Decoder parameter gradients, present only when the caller asked.
    dec: Option<MlpGrads<T>>,
}

/// Distillation + reconstruction loss over one batch:
/// `Σ_r ‖F̂(r) − F(r)‖² + λ_RGB Σ_r ‖Ĉ(r) − C(r)‖² + λ_reg · L_TV`.
///
/// Gradients flow to the content grids, trunk, and head only; the decoder
/// stays frozen — its parameter gradients fall out of the MLP backward
/// anyway, so `dec_grads: Some(buffer)` collects them (zeroing the buffer
/// first) for the learnable-decoder ablation, while `None` discards them.
/// `stats` is updated from the rendered feature batch. `grads` is zeroed
/// first.
pub fn content_loss<T: Real>(
    batch: &RayBatch<T>,
    field: &SceneContentField<T>,
    decoder: &ColorDecoder<T>,
    cfg: &TrainConfig,
    stats: &mut ContentStats<T>,
    grads: &mut ContentGrads<T>,
    dec_grads: Option<&mut MlpGrads<T>>,
) -> Result<T> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("content_loss", "empty ray batch"));
    }
    let cv = field.content_channels();
    let colors = batch.target("color", &batch.color, 3)?;
    let feats = batch.target("content-feature", &batch.content, cv)?;
    if decoder.content_channels() != cv {
        return Err(Error::shape(
            "content_loss",
            format!(
                "decoder expects {} channels, field provides {cv}",
                decoder.content_channels()
            ),
        ));
    }
    grads.zero();
    let mut dec_grads = dec_grads;
    if let Some(dg) = dec_grads.as_deref_mut() {
        let want: Vec<usize> = decoder.mlp.param_slices().iter().map(|s| s.len()).collect();
        let got: Vec<usize> = dg.slices().iter().map(|s| s.len()).collect();
        if want != got {
            return Err(Error::shape(
                "content_loss",
                format!("decoder grad buffer {got:?} vs decoder parameters {want:?}"),
            ));
        }
        dg.zero();
    }

    let n = batch.len();
    let want_dec = dec_grads.is_some();
    let parts: Vec<ContentChunkOut<T>> = chunk_ranges(n)
        .into_par_iter()
        .map(|(s, e)| content_chunk(batch, field, decoder, cfg, colors, feats, s, e, want_dec))
        .collect::<Result<_>>()?;

    let mut total = T::zero();
    let mut feat_rows = Tensor::zeros(&[n, cv]);
    for (part, (s, e)) in parts.iter().zip(chunk_ranges(n)) {
        total += part.loss;
        grads.add_assign(&part.grads);
        feat_rows.data_mut()[s * cv..e * cv].copy_from_slice(&part.feats);
        if let Some(dg) = dec_grads.as_deref_mut() {
            dg.add_assign(part.dec.as_ref().unwrap());
        }
    }
    stats.update(&feat_rows)?;

    if cfg.lambda_reg > 0.0 {
        let lam = T::of(cfg.lambda_reg);
        let tv = tv_regularizer(&field.grids, lam, &mut grads.grids)?;
        total += lam * tv;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn content_chunk<T: Real>(
    batch: &RayBatch<T>,
    field: &SceneContentField<T>,
    decoder: &ColorDecoder<T>,
    cfg: &TrainConfig,
    colors: &Tensor<T>,
    feats: &Tensor<T>,
    start: usize,
    end: usize,
    want_dec: bool,
) -> Result<ContentChunkOut<T>> {
    let k = cfg.k_samples;
    let cv = field.content_channels();
    let w_row = cv + 3;
    let lam_rgb = T::of(cfg.lambda_rgb);
    let skip = T::of(SKIP_WEIGHT_EPS);
    let aabb = field.layout.aabb;

    let mut s = ContentScratch {
        samples: RaySamples::new(),
        caches: (0..k).map(|_| ContentSampleCache::default()).collect(),
        sigmas: Vec::with_capacity(k),
        weights: vec![T::zero(); k],
        inbox: vec![false; k],
        kept: vec![false; k],
        vals: vec![T::zero(); k * w_row],
        dec_ws: (0..k).map(|_| MlpWorkspace::new()).collect(),
        dec_grads: MlpGrads::zeros_like(&decoder.mlp),
        out: vec![T::zero(); w_row],
        grad_out: vec![T::zero(); w_row],
        grad_vals: vec![T::zero(); k * w_row],
        grad_sigmas: vec![T::zero(); k],
        trans_scratch: Vec::new(),
        grad_feat: vec![T::zero(); cv],
        grad_feat_dec: vec![T::zero(); cv],
    };
    let mut loss = T::zero();
    let mut grads = ContentGrads::zeros_like(field);
    let mut feat_out = vec![T::zero(); (end - start) * cv];

    for r in start..end {
        let ray = &batch.rays[r];
        let mut rng = rand::SeedableRng::seed_from_u64(derive_seed(batch.seed, r as u64));
        let jitter = batch.stratified.then_some(&mut rng);
        sample_along_ray_into(ray, batch.near, batch.far, k, jitter, &mut s.samples)?;

        // Density pass, then transmittance weights.
        s.sigmas.clear();
        for i in 0..k {
            let p = s.samples.points[i];
            s.inbox[i] = aabb.contains(p);
            let sigma = if s.inbox[i] {
                field.sample_density(p, &mut s.caches[i])?
            } else {
                T::zero()
            };
            s.sigmas.push(sigma);
        }
        let mut trans = T::one();
        for i in 0..k {
            let e = (-(s.sigmas[i] * s.samples.delta[i])).exp();
            s.weights[i] = trans * (T::one() - e);
            trans *= e;
        }

        // Feature + decode pass over contributing samples.
        s.vals.fill(T::zero());
        for i in 0..k {
            s.kept[i] = s.inbox[i] && s.weights[i] > skip;
            if !s.kept[i] {
                continue;
            }
            let row = &mut s.vals[i * w_row..(i + 1) * w_row];
            let (f_part, c_part) = row.split_at_mut(cv);
            field.sample_feature(ray.dir, f_part, &mut s.caches[i])?;
            decoder.decode_row(f_part, c_part, &mut s.dec_ws[i])?;
        }
        s.out.fill(T::zero());
        for i in 0..k {
            if s.kept[i] {
                axpy(s.weights[i], &s.vals[i * w_row..(i + 1) * w_row], &mut s.out);
            }
        }
        feat_out[(r - start) * cv..(r - start + 1) * cv].copy_from_slice(&s.out[..cv]);

        // Residuals of both terms feed one quadrature backward.
        let two = T::of(2.0);
        for c in 0..cv {
            let d = s.out[c] - feats.data()[r * cv + c];
            loss += d * d;
            s.grad_out[c] = two * d;
        }
        for c in 0..3 {
            let d = s.out[cv + c] - colors.data()[r * 3 + c];
            loss += lam_rgb * d * d;
            s.grad_out[cv + c] = two * lam_rgb * d;
        }
        volume_render_backward_into(
            &s.vals,
            &s.sigmas,
            &s.samples.delta,
            w_row,
            &s.grad_out,
            &mut s.grad_vals,
            &mut s.grad_sigmas,
            &mut s.trans_scratch,
        )?;
        for i in 0..k {
            if !s.inbox[i] {
                // σ is identically zero outside the scene box — not a
                // function of the parameters.
                continue;
            }
            if s.kept[i] {
                let row = &s.grad_vals[i * w_row..(i + 1) * w_row];
                decoder.mlp.backward_ws(
                    &row[cv..],
                    &mut s.dec_ws[i],
                    &mut s.dec_grads,
                    Some(&mut s.grad_feat_dec),
                );
                s.grad_feat.copy_from_slice(&row[..cv]);
                axpy(T::one(), &s.grad_feat_dec, &mut s.grad_feat);
                field.sample_backward(
                    &mut s.caches[i],
                    s.grad_sigmas[i],
                    Some(&s.grad_feat),
                    &mut grads,
                );
            } else {
                field.sample_backward(&mut s.caches[i], s.grad_sigmas[i], None, &mut grads);
            }
        }
    }
    Ok(ContentChunkOut {
        loss,
        grads,
        feats: feat_out,
        // The scratch accumulated decoder gradients across the chunk's rays
        // as a byproduct of the MLP backward; hand them over when wanted.
        dec: want_dec.then_some(s.dec_grads),
    })
}

/// L1 distillation loss for the semantic field:
/// `Σ_r Σ_c |F̂_D(r)[c] − F_D(r)[c]|`.
///
/// Compositing weights come from the content field's density but no
/// gradient flows back through them — the density is treated as a constant
/// here, so only the semantic grids and head receive gradients. `grads` is
/// zeroed first.
pub fn semantic_loss<T: Real>(
    batch: &RayBatch<T>,
    semantic: &SceneSemanticField<T>,
    content: &SceneContentField<T>,
    cfg: &TrainConfig,
    grads: &mut SemanticGrads<T>,
) -> Result<T> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("semantic_loss", "empty ray batch"));
    }
    let cd = semantic.semantic_channels();
    let targets = batch.target("semantic-feature", &batch.semantic, cd)?;
    grads.zero();

    let n = batch.len();
    let parts: Vec<(T, SemanticGrads<T>)> = chunk_ranges(n)
        .into_par_iter()
        .map(|(s, e)| semantic_chunk(batch, semantic, content, cfg, targets, s, e))
        .collect::<Result<_>>()?;
    let mut total = T::zero();
    for (loss, part) in &parts {
        total += *loss;
        grads.add_assign(part);
    }
    Ok(total)
}

fn semantic_chunk<T: Real>(
    batch: &RayBatch<T>,
    semantic: &SceneSemanticField<T>,
    content: &SceneContentField<T>,
    cfg: &TrainConfig,
    targets: &Tensor<T>,
    start: usize,
    end: usize,
) -> Result<(T, SemanticGrads<T>)> {
    let k = cfg.k_samples;
    let cd = semantic.semantic_channels();
    let skip = T::of(SKIP_WEIGHT_EPS);
    let aabb = content.layout.aabb;

    let mut samples = RaySamples::new();
    let mut density_cache = ContentSampleCache::default();
    let mut sem_caches: Vec<SemanticSampleCache<T>> =
        (0..k).map(|_| SemanticSampleCache::default()).collect();
    let mut sigmas = Vec::with_capacity(k);
    let mut weights = vec![T::zero(); k];
    let mut kept = vec![false; k];
    let mut vals = vec![T::zero(); k * cd];
    let mut out = vec![T::zero(); cd];
    let mut grad_out = vec![T::zero(); cd];
    let mut grad_feat = vec![T::zero(); cd];

    let mut loss = T::zero();
    let mut grads = SemanticGrads::zeros_like(semantic);

    for r in start..end {
        let ray = &batch.rays[r];
        let mut rng = rand::SeedableRng::seed_from_u64(derive_seed(batch.seed, r as u64));
        let jitter = batch.stratified.then_some(&mut rng);
        sample_along_ray_into(ray, batch.near, batch.far, k, jitter, &mut samples)?;

        // Stop-gradient density: forward only, one shared throwaway cache.
        sigmas.clear();
        for i in 0..k {
            let p = samples.points[i];
            let sigma = if aabb.contains(p) {
                content.sample_density(p, &mut density_cache)?
            } else {
                T::zero()
            };
            sigmas.push(sigma);
        }
        let mut trans = T::one();
        for i in 0..k {
            let e = (-(sigmas[i] * samples.delta[i])).exp();
            weights[i] = trans * (T::one() - e);
            trans *= e;
        }

        vals.fill(T::zero());
        out.fill(T::zero());
        for i in 0..k {
            kept[i] = weights[i] > skip && aabb.contains(samples.points[i]);
            if kept[i] {
                let row = &mut vals[i * cd..(i + 1) * cd];
                semantic.sample(samples.points[i], row, &mut sem_caches[i])?;
                axpy(weights[i], row, &mut out);
            }
        }

        for c in 0..cd {
            let d = out[c] - targets.data()[r * cd + c];
            loss += d.abs();
            grad_out[c] = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
        }
        for i in 0..k {
            if kept[i] {
                for c in 0..cd {
                    grad_feat[c] = weights[i] * grad_out[c];
                }
                semantic.sample_backward(&mut sem_caches[i], &grad_feat, &mut grads);
            }
        }
    }
    Ok((loss, grads))
}

/// Pixel-resolution distillation targets for one view.
#[derive(Debug, Clone)]
pub struct ViewTargets<T> {
    /// `[H × W × C_V]` content features (encoded, edge-refined, upsampled).
    pub content: Tensor<T>,
    /// `[H × W × C_D]` semantic features, likewise at pixel resolution.
    pub semantic: Tensor<T>,
}

/// Encodes every view once and upsamples the feature maps to pixel
/// resolution — done ahead of the training loop because encoding per batch
/// would dominate runtime. With `cache_dir` set, each target map is stored
/// on disk (keyed by kind, encoder seed/channels, and view index) and reused
/// byte-identically on the next run.
pub fn precompute_view_targets<T: Real>(
    dataset: &SceneDataset<T>,
    content_spec: &EncoderSpec,
    semantic_spec: &EncoderSpec,
    cache_dir: Option<&Path>,
) -> Result<Vec<ViewTargets<T>>> {
    dataset.validate()?;
    let content_enc = Encoder::<T>::from_spec(content_spec)?;
    let semantic_enc = Encoder::<T>::from_spec(semantic_spec)?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::with_capacity(dataset.views.len());
    for (i, view) in dataset.views.iter().enumerate() {
        let (h, w) = (view.image.shape()[0], view.image.shape()[1]);
        let content = cached_target(
            cache_dir,
            "content",
            content_spec,
            i,
            &[h, w, content_spec.channels],
            || Ok(upsample_to_pixels(&content_enc.encode(&view.image, None)?, &view.image)?.features),
        )?;
        let semantic = cached_target(
            cache_dir,
            "semantic",
            semantic_spec,
            i,
            &[h, w, semantic_spec.channels],
            || {
                let fmap = semantic_enc.encode(&view.image, view.labels.as_ref())?;
                Ok(upsample_to_pixels(&fmap, &view.image)?.features)
            },
        )?;
        out.push(ViewTargets { content, semantic });
    }
    Ok(out)
}

fn cached_target<T: Real>(
    dir: Option<&Path>,
    kind: &str,
    spec: &EncoderSpec,
    view: usize,
    shape: &[usize],
    compute: impl FnOnce() -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let path = dir.map(|d| {
        d.join(format!(
            "{kind}_s{}c{}_{view:04}.fpt",
            spec.seed, spec.channels
        ))
    });
    if let Some(p) = &path {
        if p.exists() {
            if let Ok(t) = Tensor::<T>::read_fpt(p) {
                if t.shape() == shape {
                    return Ok(t);
                }
            }
            // Wrong shape or unreadable: fall through and recompute.
        }
    }
    let t = compute()?;
    if t.shape() != shape {
        return Err(Error::shape(
            "precompute_view_targets",
            format!("{kind} targets came out {:?}, expected {shape:?}", t.shape()),
        ));
    }
    if let Some(p) = &path {
        t.write_fpt(p)?;
    }
    Ok(t)
}

/// One line of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub content_loss: f64,
    pub semantic_loss: f64,
    /// Held-out PSNR in dB; present on probe steps and the final step.
    pub psnr: Option<f64>,
    /// Wall time since training started, milliseconds.
    pub wall_ms: u64,
}

/// Everything [`train_scene`] reports: one record per step plus the summary.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    /// Index of the view withheld from the ray batches.
    pub heldout_view: usize,
    pub final_psnr: f64,
}

impl TrainReport {
    /// The records as JSON lines, one object per step.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::invalid("TrainReport::to_json_lines", e.to_string()))?;
            s.push_str(&line);
            s.push('\n');
        }
        Ok(s)
    }
}

/// The trained state produced by [`train_scene`].
#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub content: SceneContentField<T>,
    pub semantic: SceneSemanticField<T>,
    pub stats: ContentStats<T>,
    /// The decoder actually used for rendering: a verbatim copy of the input
    /// unless `learn_decoder` trained it alongside the fields.
    pub decoder: ColorDecoder<T>,
    pub report: TrainReport,
}

/// Single-stage scene optimization: both fields trained together.
///
/// Per step, a seeded ray batch is drawn uniformly over the pixels of every
/// view except the held-out one (the last view), [`content_loss`] and
/// [`semantic_loss`] run over it, and each parameter group takes one Adam
/// step — grids at `lr_grids`, MLPs at `lr_mlps`. The decoder is left
/// untouched unless `cfg.learn_decoder` (the ablation), in which case a
/// local copy trains at the MLP rate and comes back in the output with its
/// `frozen` flag cleared. Held-out PSNR is probed every `heldout_every`
/// steps and always on the final step. `on_record` sees each report line as
/// it is produced.
///
/// Aborts with a diagnostic if either loss stops being finite.
#[allow(clippy::too_many_arguments)]
pub fn train_scene<T: Real>(
    dataset: &SceneDataset<T>,
    field_cfg: &FieldConfig,
    cfg: &TrainConfig,
    decoder: &ColorDecoder<T>,
    content_spec: &EncoderSpec,
    semantic_spec: &EncoderSpec,
    cache_dir: Option<&Path>,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    field_cfg.validate()?;
    dataset.validate()?;
    if dataset.views.len() < 2 {
        return Err(Error::invalid(
            "train_scene",
            format!(
                "need at least 2 views (1 train + 1 held out), got {}",
                dataset.views.len()
            ),
        ));
    }
    let bad_channels = |what: &str, got: usize, want: usize| {
        Err(Error::shape(
            "train_scene",
            format!("{what} provides {got} channels, field config wants {want}"),
        ))
    };
    if content_spec.channels != field_cfg.content_channels {
        return bad_channels("content encoder", content_spec.channels, field_cfg.content_channels);
    }
    if semantic_spec.channels != field_cfg.semantic_channels {
        return bad_channels(
            "semantic encoder",
            semantic_spec.channels,
            field_cfg.semantic_channels,
        );
    }
    if decoder.content_channels() != field_cfg.content_channels {
        return bad_channels(
            "decoder",
            decoder.content_channels(),
            field_cfg.content_channels,
        );
    }
    // One shared sampling range for the whole dataset keeps RayBatch simple;
    // orbit captures satisfy this exactly.
    let (near, far) = (dataset.views[0].camera.near, dataset.views[0].camera.far);
    for (i, view) in dataset.views.iter().enumerate() {
        if view.camera.near != near || view.camera.far != far {
            return Err(Error::invalid(
                "train_scene",
                format!("view {i} has near/far differing from view 0; mixed ranges are unsupported"),
            ));
        }
    }

    let targets = precompute_view_targets(dataset, content_spec, semantic_spec, cache_dir)?;
    let n_views = dataset.views.len();
    let heldout = n_views - 1;
    let train_views: Vec<usize> = (0..heldout).collect();

    let mut content = SceneContentField::init(dataset.aabb, field_cfg, derive_seed(cfg.seed, 1))?;
    let mut semantic = SceneSemanticField::init(dataset.aabb, field_cfg, derive_seed(cfg.seed, 2))?;
    let mut stats = ContentStats::new(field_cfg.content_channels, T::of(cfg.stats_decay))?;
    let mut dec = decoder.clone();
    if cfg.learn_decoder {
        dec.frozen = false;
    }

    let mut cgrads = ContentGrads::zeros_like(&content);
    let mut sgrads = SemanticGrads::zeros_like(&semantic);
    let mut dgrads = cfg.learn_decoder.then(|| MlpGrads::zeros_like(&dec.mlp));

    fn ro<'a, U>(s: &'a [&'a mut [U]]) -> Vec<&'a [U]> {
        s.iter().map(|x| &**x).collect()
    }
    let mut adam_cg = AdamState::new_like(&ro(&content.grid_param_slices_mut()));
    let mut adam_cm = AdamState::new_like(&ro(&content.mlp_param_slices_mut()));
    let mut adam_sg = AdamState::new_like(&ro(&semantic.grid_param_slices_mut()));
    let mut adam_sm = AdamState::new_like(&ro(&semantic.mlp_param_slices_mut()));
    let mut adam_dec = cfg
        .learn_decoder
        .then(|| AdamState::new_like(&dec.mlp.param_slices()));
    let (grids_cfg, mlps_cfg) = (cfg.adam_grids(), cfg.adam_mlps());

    let t0 = Instant::now();
    let mut records = Vec::with_capacity(cfg.steps);
    let mut final_psnr = f64::NAN;
    for step in 0..cfg.steps {
        let batch = assemble_batch(
            dataset,
            &targets,
            &train_views,
            near,
            far,
            cfg.rays_per_batch,
            derive_seed(cfg.seed, step as u64),
        )?;
        let lc = content_loss(
            &batch,
            &content,
            &dec,
            cfg,
            &mut stats,
            &mut cgrads,
            dgrads.as_mut(),
        )?;
        let ls = semantic_loss(&batch, &semantic, &content, cfg, &mut sgrads)?;
        if !lc.as_f64().is_finite() || !ls.as_f64().is_finite() {
            return Err(Error::invalid(
                "train_scene",
                format!(
                    "loss diverged at step {step}: content {}, semantic {}",
                    lc.as_f64(),
                    ls.as_f64()
                ),
            ));
        }

        adam_cg.step(&grids_cfg, &mut content.grid_param_slices_mut(), &cgrads.grid_slices())?;
        adam_cm.step(&mlps_cfg, &mut content.mlp_param_slices_mut(), &cgrads.mlp_slices())?;
        adam_sg.step(&grids_cfg, &mut semantic.grid_param_slices_mut(), &sgrads.grid_slices())?;
        adam_sm.step(&mlps_cfg, &mut semantic.mlp_param_slices_mut(), &sgrads.mlp_slices())?;
        if let (Some(ad), Some(dg)) = (adam_dec.as_mut(), dgrads.as_ref()) {
            ad.step(&mlps_cfg, &mut dec.mlp.param_slices_mut(), &dg.slices())?;
        }

        let last = step + 1 == cfg.steps;
        let probe = last || (cfg.heldout_every > 0 && (step + 1) % cfg.heldout_every == 0);
        let db = if probe {
            let img = render_image(
                &content,
                None,
                &dataset.views[heldout].camera,
                RenderMode::Color,
                Some(&dec),
                cfg.k_samples,
            )?;
            Some(psnr(&img, &dataset.views[heldout].image)?)
        } else {
            None
        };
        if last {
            final_psnr = db.unwrap();
        }
        let record = TrainRecord {
            step,
            content_loss: lc.as_f64(),
            semantic_loss: ls.as_f64(),
            psnr: db,
            wall_ms: t0.elapsed().as_millis() as u64,
        };
        on_record(&record);
        records.push(record);
    }

    Ok(TrainOutput {
        content,
        semantic,
        stats,
        decoder: dec,
        report: TrainReport {
            records,
            heldout_view: heldout,
            final_psnr,
        },
    })
}

/// Draws `rays` pixels uniformly over the training views and gathers their
/// per-ray targets. The batch seed doubles as the per-ray jitter base, so
/// one u64 pins the whole batch.
fn assemble_batch<T: Real>(
    dataset: &SceneDataset<T>,
    targets: &[ViewTargets<T>],
    train_views: &[usize],
    near: T,
    far: T,
    rays: usize,
    batch_seed: u64,
) -> Result<RayBatch<T>> {
    // The pixel stream must not collide with per-ray jitter streams, which
    // use derive_seed(batch_seed, ray_index); ray counts never reach u64::MAX.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(batch_seed, u64::MAX));
    let (h, w) = (
        dataset.views[0].image.shape()[0],
        dataset.views[0].image.shape()[1],
    );
    let cv = targets[0].content.shape()[2];
    let cd = targets[0].semantic.shape()[2];
    let mut batch_rays = Vec::with_capacity(rays);
    let mut color = Tensor::zeros(&[rays, 3]);
    let mut content = Tensor::zeros(&[rays, cv]);
    let mut semantic = Tensor::zeros(&[rays, cd]);
    for r in 0..rays {
        let vi = train_views[rng.random_range(0..train_views.len())];
        let u = rng.random_range(0..w);
        let v = rng.random_range(0..h);
        let view = &dataset.views[vi];
        batch_rays.push(view.camera.ray_for_pixel(u, v)?);
        let px = v * w + u;
        color.data_mut()[r * 3..(r + 1) * 3]
            .copy_from_slice(&view.image.data()[px * 3..(px + 1) * 3]);
        content.data_mut()[r * cv..(r + 1) * cv]
            .copy_from_slice(&targets[vi].content.data()[px * cv..(px + 1) * cv]);
        semantic.data_mut()[r * cd..(r + 1) * cd]
            .copy_from_slice(&targets[vi].semantic.data()[px * cd..(px + 1) * cd]);
    }
    Ok(RayBatch {
        rays: batch_rays,
        near,
        far,
        stratified: true,
        seed: batch_seed,
        color: Some(color),
        content: Some(content),
        semantic: Some(semantic),
    })
}

#[cfg(test)]
mod adam_tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = vec![1.0f64, -2.0, 0.5];
        let g = vec![0.0f64; 3];
        let mut state = AdamState::new_like(&[&p.clone()]);
        let cfg = AdamConfig::default();
        let before = p.clone();
        state.step(&cfg, &mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn quadratic_converges() {
        // Minimize f(x) = x² from x = 1.
        let mut x = vec![1.0f64];
        let mut state = AdamState::new_like(&[&x.clone()]);
        let cfg = AdamConfig::with_lr(0.1);
        for _ in 0..200 {
            let g = vec![2.0 * x[0]];
            state.step(&cfg, &mut [&mut x], &[&g]).unwrap();
        }
        assert!(x[0].abs() < 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn matches_reference_recurrence() {
        // Independent scalar Adam run over a fixed gradient sequence.
        let cfg = AdamConfig {
            lr: 0.05,
            beta1: 0.8,
            beta2: 0.95,
            eps: 1e-8,
        };
        let grad_seq = [0.3f64, -1.1, 0.7, 0.0, 2.5];
        let mut expect = 0.4f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in grad_seq.iter().enumerate() {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
            let vh = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
            expect -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }

        let mut x = vec![0.4f64];
        let mut state = AdamState::new_like(&[&x.clone()]);
        for g in grad_seq {
            state.step(&cfg, &mut [&mut x], &[&[g][..]]).unwrap();
        }
        assert!((x[0] - expect).abs() < 1e-14, "{} vs {expect}", x[0]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || -> Vec<f64> {
            let mut x = vec![0.3f64, -0.8];
            let mut state = AdamState::new_like(&[&x.clone()]);
            let cfg = AdamConfig::default();
            for t in 0..50 {
                let g = vec![x[0] * 0.7 + t as f64 * 0.01, x[1].sin()];
                state.step(&cfg, &mut [&mut x], &[&g]).unwrap();
            }
            x
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![1.0f64, 2.0];
        let mut state = AdamState::new_like(&[&p.clone()]);
        let cfg = AdamConfig::default();
        assert!(state.step(&cfg, &mut [&mut p], &[&[1.0][..]]).is_err());
        let g = vec![0.0; 2];
        assert!(state
            .step(&cfg, &mut [&mut p, &mut [0.0; 1][..]], &[&g, &[0.0][..]])
            .is_err());
    }
}


#[cfg(test)]
mod loss_tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::geom::{Aabb, Vec3};
    use crate::render::{generate_rays, render_image, CameraModel, RenderMode};

    fn micro_field_cfg() -> FieldConfig {
        FieldConfig {
            blocks: [1, 1, 1],
            overlap_frac: 0.15,
            content_resolution: [8, 8, 8],
            semantic_resolution: [6, 6, 6],
            grid_channels: 4,
            content_channels: 6,
            semantic_channels: 4,
            hidden: 8,
            n_freq: 1,
        }
    }

    fn micro_train_cfg() -> TrainConfig {
        TrainConfig {
            k_samples: 4,
            ..TrainConfig::default()
        }
    }

    struct Fixture {
        content: SceneContentField<f64>,
        semantic: SceneSemanticField<f64>,
        decoder: ColorDecoder<f64>,
        cam: CameraModel<f64>,
    }

    /// Small scene with the density bias raised so rays actually absorb.
    fn fixture() -> Fixture {
        let aabb = Aabb::new(Vec3::splat(-1.0), Vec3::splat(1.0));
        let cfg = micro_field_cfg();
        let mut content = SceneContentField::init(aabb, &cfg, 21).unwrap();
        content.trunk.layers.last_mut().unwrap().bias[0] = 1.0;
        let semantic = SceneSemanticField::init(aabb, &cfg, 22).unwrap();
        let decoder = ColorDecoder::init(cfg.content_channels, 23);
        let pose = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, -3.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let cam = CameraModel::new(8.0, 8.0, 4.0, 4.0, 8, 8, &pose, 1.5, 4.5).unwrap();
        Fixture {
            content,
            semantic,
            decoder,
            cam,
        }
    }

    /// Every trainable buffer of the content field, in the optimizer's
    /// order (grid planes per block, then trunk/head layer weight + bias).
    fn content_slices_mut(f: &mut SceneContentField<f64>) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for g in &mut f.grids {
            out.push(g.plane_xy.data_mut());
            out.push(g.plane_xz.data_mut());
            out.push(g.plane_yz.data_mut());
        }
        for l in f.trunk.layers.iter_mut().chain(f.head.layers.iter_mut()) {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    fn semantic_slices_mut(f: &mut SceneSemanticField<f64>) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for g in &mut f.grids {
            out.push(g.plane_xy.data_mut());
            out.push(g.plane_xz.data_mut());
            out.push(g.plane_yz.data_mut());
        }
        for l in &mut f.head.layers {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    const PIXELS: [(usize, usize); 4] = [(1, 2), (3, 3), (4, 4), (6, 1)];

    /// Batch whose targets were rendered from the scene itself (midpoint
    /// sampling so the loss forward retraces the renderer exactly).
    fn matched_batch(f: &Fixture, k: usize) -> RayBatch<f64> {
        let feat_img = render_image(
            &f.content,
            None,
            &f.cam,
            RenderMode::ContentFeature,
            None,
            k,
        )
        .unwrap();
        let color_img =
            render_image(&f.content, None, &f.cam, RenderMode::Color, Some(&f.decoder), k)
                .unwrap();
        let sem_img = render_image(
            &f.content,
            Some(&f.semantic),
            &f.cam,
            RenderMode::SemanticFeature,
            None,
            k,
        )
        .unwrap();
        let cv = f.content.content_channels();
        let cd = f.semantic.semantic_channels();
        let mut color = Tensor::zeros(&[PIXELS.len(), 3]);
        let mut content = Tensor::zeros(&[PIXELS.len(), cv]);
        let mut semantic = Tensor::zeros(&[PIXELS.len(), cd]);
        for (r, &(u, v)) in PIXELS.iter().enumerate() {
            for c in 0..3 {
                color.data_mut()[r * 3 + c] = color_img.data()[(v * 8 + u) * 3 + c];
            }
            for c in 0..cv {
                content.data_mut()[r * cv + c] = feat_img.data()[(v * 8 + u) * cv + c];
            }
            for c in 0..cd {
                semantic.data_mut()[r * cd + c] = sem_img.data()[(v * 8 + u) * cd + c];
            }
        }
        RayBatch {
            rays: generate_rays(&f.cam, &PIXELS).unwrap(),
            near: f.cam.near,
            far: f.cam.far,
            stratified: false,
            seed: 11,
            color: Some(color),
            content: Some(content),
            semantic: Some(semantic),
        }
    }

    #[test]
    fn perfect_field_pays_only_the_regularizer() {
        let f = fixture();
        let batch = matched_batch(&f, 4);
        let cfg = micro_train_cfg();
        let mut stats = ContentStats::new(6, 0.99).unwrap();
        let mut grads = ContentGrads::zeros_like(&f.content);
        let loss =
            content_loss(&batch, &f.content, &f.decoder, &cfg, &mut stats, &mut grads, None)
                .unwrap();
        let mut tv_grads: Vec<TriPlaneGridGrads<f64>> = f
            .content
            .grids
            .iter()
            .map(TriPlaneGridGrads::zeros_like)
            .collect();
        let tv = tv_regularizer(&f.content.grids, 1.0, &mut tv_grads).unwrap();
        assert!(
            (loss - cfg.lambda_reg * tv).abs() < 1e-18,
            "data terms should vanish: loss {loss} vs λ·tv {}",
            cfg.lambda_reg * tv
        );

        let zero_reg = TrainConfig {
            lambda_reg: 0.0,
            ..cfg
        };
        let mut stats2 = ContentStats::new(6, 0.99).unwrap();
        let loss0 =
            content_loss(&batch, &f.content, &f.decoder, &zero_reg, &mut stats2, &mut grads, None)
                .unwrap();
        assert_eq!(loss0, 0.0, "matched targets and λ_reg = 0 ⇒ zero loss");
    }

    #[test]
    fn mismatched_targets_cost_distillation_loss() {
        let f = fixture();
        let mut batch = matched_batch(&f, 4);
        batch.content = Some(Tensor::zeros(&[PIXELS.len(), 6]));
        let cfg = TrainConfig {
            lambda_rgb: 0.0,
            lambda_reg: 0.0,
            ..micro_train_cfg()
        };
        let mut stats = ContentStats::new(6, 0.99).unwrap();
        let mut grads = ContentGrads::zeros_like(&f.content);
        let loss =
            content_loss(&batch, &f.content, &f.decoder, &cfg, &mut stats, &mut grads, None)
                .unwrap();
        assert!(loss > 0.0, "rendered features differ from zero targets");
    }

    #[test]
    fn first_stats_update_equals_rendered_feature_means() {
        let f = fixture();
        let batch = matched_batch(&f, 4);
        let cfg = micro_train_cfg();
        let mut stats = ContentStats::new(6, 0.99).unwrap();
        let mut grads = ContentGrads::zeros_like(&f.content);
        content_loss(&batch, &f.content, &f.decoder, &cfg, &mut stats, &mut grads, None)
                .unwrap();
        // The batch targets are the rendered features themselves, so the
        // first EMA update must adopt their per-channel means exactly.
        let feats = batch.content.as_ref().unwrap();
        for c in 0..6 {
            let mean: f64 =
                (0..PIXELS.len()).map(|r| feats.data()[r * 6 + c]).sum::<f64>() / PIXELS.len() as f64;
            assert!(
                (stats.mu[c] - mean).abs() < 1e-12,
                "channel {c}: {} vs {mean}",
                stats.mu[c]
            );
        }
        assert!(stats.initialized);
    }

    fn eval_content_loss(
        batch: &RayBatch<f64>,
        field: &SceneContentField<f64>,
        decoder: &ColorDecoder<f64>,
        cfg: &TrainConfig,
    ) -> f64 {
        let mut stats = ContentStats::new(field.content_channels(), 0.99).unwrap();
        let mut grads = ContentGrads::zeros_like(field);
        content_loss(batch, field, decoder, cfg, &mut stats, &mut grads, None).unwrap()
    }

    #[test]
    fn content_gradients_match_finite_differences() {
        let f = fixture();
        let mut field = f.content;
        let mut batch = matched_batch(
            &Fixture {
                content: field.clone(),
                semantic: f.semantic,
                decoder: f.decoder.clone(),
                cam: f.cam.clone(),
            },
            4,
        );
        // Shift the targets so residuals (and hence gradients) are nonzero,
        // and jitter the quadrature like real training batches do.
        for v in batch.content.as_mut().unwrap().data_mut() {
            *v += 0.3;
        }
        for v in batch.color.as_mut().unwrap().data_mut() {
            *v += 0.2;
        }
        batch.stratified = true;
        let cfg = TrainConfig {
            lambda_rgb: 0.7,
            lambda_reg: 1e-3,
            ..micro_train_cfg()
        };

        let mut stats = ContentStats::new(6, 0.99).unwrap();
        let mut grads = ContentGrads::zeros_like(&field);
        content_loss(&batch, &field, &f.decoder, &cfg, &mut stats, &mut grads, None).unwrap();
        let analytic: Vec<f64> = grads
            .grid_slices()
            .into_iter()
            .chain(grads.mlp_slices())
            .flat_map(|s| s.iter().copied().collect::<Vec<_>>())
            .collect();

        let h = 1e-6;
        let slice_lens: Vec<usize> =
            content_slices_mut(&mut field).iter().map(|s| s.len()).collect();
        let mut fd = Vec::with_capacity(analytic.len());
        for si in 0..slice_lens.len() {
            for pi in 0..slice_lens[si] {
                let tweak = |field: &mut SceneContentField<f64>, d: f64| {
                    content_slices_mut(field)[si][pi] += d;
                };
                tweak(&mut field, h);
                let lp = eval_content_loss(&batch, &field, &f.decoder, &cfg);
                tweak(&mut field, -2.0 * h);
                let lm = eval_content_loss(&batch, &field, &f.decoder, &cfg);
                tweak(&mut field, h);
                fd.push((lp - lm) / (2.0 * h));
            }
        }
        assert_eq!(fd.len(), analytic.len());
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in analytic.iter().zip(&fd) {
            num += (a - b) * (a - b);
            den += b * b;
            assert!(
                (a - b).abs() <= 1e-4 * (1.0 + b.abs()),
                "per-parameter drift: analytic {a} vs fd {b}"
            );
        }
        let rel = (num / den.max(1e-300)).sqrt();
        assert!(rel < 1e-5, "total-gradient relative error {rel}");
    }

    #[test]
    fn semantic_loss_vanishes_on_matched_targets() {
        let f = fixture();
        let batch = matched_batch(&f, 4);
        let cfg = micro_train_cfg();
        let mut grads = SemanticGrads::zeros_like(&f.semantic);
        let loss = semantic_loss(&batch, &f.semantic, &f.content, &cfg, &mut grads).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn semantic_gradients_match_finite_differences() {
        let f = fixture();
        let mut semantic = f.semantic;
        let mut batch = matched_batch(
            &Fixture {
                content: f.content.clone(),
                semantic: semantic.clone(),
                decoder: f.decoder.clone(),
                cam: f.cam.clone(),
            },
            4,
        );
        // Offset keeps every residual away from the |·| kink.
        for v in batch.semantic.as_mut().unwrap().data_mut() {
            *v += 0.1;
        }
        batch.stratified = true;
        let cfg = micro_train_cfg();

        let mut grads = SemanticGrads::zeros_like(&semantic);
        semantic_loss(&batch, &semantic, &f.content, &cfg, &mut grads).unwrap();
        let analytic: Vec<f64> = grads
            .grid_slices()
            .into_iter()
            .chain(grads.mlp_slices())
            .flat_map(|s| s.iter().copied().collect::<Vec<_>>())
            .collect();

        let eval = |semantic: &SceneSemanticField<f64>| -> f64 {
            let mut g = SemanticGrads::zeros_like(semantic);
            semantic_loss(&batch, semantic, &f.content, &cfg, &mut g).unwrap()
        };
        let h = 1e-6;
        let slice_lens: Vec<usize> =
            semantic_slices_mut(&mut semantic).iter().map(|s| s.len()).collect();
        let mut fd = Vec::with_capacity(analytic.len());
        for si in 0..slice_lens.len() {
            for pi in 0..slice_lens[si] {
                let tweak = |field: &mut SceneSemanticField<f64>, d: f64| {
                    semantic_slices_mut(field)[si][pi] += d;
                };
                tweak(&mut semantic, h);
                let lp = eval(&semantic);
                tweak(&mut semantic, -2.0 * h);
                let lm = eval(&semantic);
                tweak(&mut semantic, h);
                fd.push((lp - lm) / (2.0 * h));
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in analytic.iter().zip(&fd) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        let rel = (num / den.max(1e-300)).sqrt();
        assert!(rel < 1e-5, "total-gradient relative error {rel}");
    }

    #[test]
    fn semantic_loss_stops_density_gradients() {
        // The loss *reads* the content density (forward), but by contract
        // emits gradients only for the semantic parameters — the API has no
        // channel back to the content field at all. Verify the forward
        // dependence is real, so the stop-gradient is a choice rather than
        // a vacuous truth.
        let f = fixture();
        let mut batch = matched_batch(&f, 4);
        for v in batch.semantic.as_mut().unwrap().data_mut() {
            *v += 0.1;
        }
        let cfg = micro_train_cfg();
        let mut grads = SemanticGrads::zeros_like(&f.semantic);
        let base = semantic_loss(&batch, &f.semantic, &f.content, &cfg, &mut grads).unwrap();

        let mut denser = f.content.clone();
        denser.trunk.layers.last_mut().unwrap().bias[0] += 0.5;
        let moved = semantic_loss(&batch, &f.semantic, &denser, &cfg, &mut grads).unwrap();
        assert!(
            (base - moved).abs() > 1e-9,
            "density must affect the semantic loss forward"
        );
    }

    #[test]
    fn missing_targets_are_rejected() {
        let f = fixture();
        let mut batch = matched_batch(&f, 4);
        batch.content = None;
        let cfg = micro_train_cfg();
        let mut stats = ContentStats::new(6, 0.99).unwrap();
        let mut cgrads = ContentGrads::zeros_like(&f.content);
        let err = content_loss(&batch, &f.content, &f.decoder, &cfg, &mut stats, &mut cgrads, None)
            .unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");

        let mut batch2 = matched_batch(&f, 4);
        batch2.semantic = None;
        let mut sgrads = SemanticGrads::zeros_like(&f.semantic);
        let err = semantic_loss(&batch2, &f.semantic, &f.content, &cfg, &mut sgrads).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
    }

    #[test]
    fn losses_are_deterministic() {
        let f = fixture();
        let mut batch = matched_batch(&f, 4);
        for v in batch.content.as_mut().unwrap().data_mut() {
            *v += 0.3;
        }
        batch.stratified = true;
        let cfg = micro_train_cfg();
        let run = || {
            let mut stats = ContentStats::new(6, 0.99).unwrap();
            let mut grads = ContentGrads::zeros_like(&f.content);
            let loss =
                content_loss(&batch, &f.content, &f.decoder, &cfg, &mut stats, &mut grads, None)
                    .unwrap();
            (loss, grads, stats)
        };
        let (l1, g1, s1) = run();
        let (l2, g2, s2) = run();
        assert_eq!(l1, l2);
        assert_eq!(s1.mu, s2.mu);
        for (a, b) in g1.grid_slices().into_iter().zip(g2.grid_slices()) {
            assert_eq!(a, b);
        }
        for (a, b) in g1.mlp_slices().into_iter().zip(g2.mlp_slices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            lr_grids: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            lambda_rgb: -0.1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            stats_decay: 1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
