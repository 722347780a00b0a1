//! AdaIN, the pre-trained color decoder, and running content statistics.
//!
//! AdaIN re-targets per-channel feature statistics: features normalized by
//! the content statistics are rescaled to the style statistics. The color
//! decoder is a small per-sample MLP that turns content features into RGB;
//! it is pretrained once on procedural image corpora (see
//! [`pretrain_decoder`]) and then frozen — scene training and stylization
//! only read it. [`ContentStats`] tracks the scene's feature statistics as
//! an exponential moving average during training; stylization uses them as
//! the AdaIN source statistics.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{
    bilinear_resize, bilinear_resize_backward, Encoder, EncoderKind, EncoderSpec,
};
use crate::error::{Error, Result};
use crate::math::{
    channel_stats, channel_stats_backward, mlp_backward, mlp_forward, Activation, MlpParams,
    MlpWorkspace,
};
use crate::scalar::{derive_seed, Real};
use crate::tensor::Tensor;
use crate::train::{AdamConfig, AdamState};

/// Per-channel affine coefficients realizing an AdaIN transform:
/// `out = scale * f + shift`.
///
/// Computed as `scale = σ_s/σ_c`, `shift = μ_s − scale·μ_c`. When the style
/// statistics equal the content statistics bitwise, `scale` is exactly 1 and
/// `shift` exactly 0, so the transform is an exact identity — stylizing a
/// scene with its own statistics reproduces the original rendering.
pub fn adain_scale_shift<T: Real>(
    mu_c: &[T],
    sigma_c: &[T],
    mu_s: &[T],
    sigma_s: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let c = mu_c.len();
    if sigma_c.len() != c || mu_s.len() != c || sigma_s.len() != c {
        return Err(Error::shape(
            "adain",
            format!(
                "statistic lengths disagree: {c}, {}, {}, {}",
                sigma_c.len(),
                mu_s.len(),
                sigma_s.len()
            ),
        ));
    }
    if let Some(bad) = sigma_c.iter().find(|s| **s <= T::zero()) {
        return Err(Error::invalid(
            "adain",
            format!("content sigma must be positive, got {}", bad.as_f64()),
        ));
    }
    let mut scale = Vec::with_capacity(c);
    let mut shift = Vec::with_capacity(c);
    for ch in 0..c {
        let s = sigma_s[ch] / sigma_c[ch];
        scale.push(s);
        shift.push(mu_s[ch] - s * mu_c[ch]);
    }
    Ok((scale, shift))
}

/// Applies `out = scale * f + shift` to one feature row in place.
pub fn adain_apply_row<T: Real>(f: &mut [T], scale: &[T], shift: &[T]) {
    debug_assert_eq!(f.len(), scale.len());
    for ((v, &a), &b) in f.iter_mut().zip(scale).zip(shift) {
        *v = a * *v + b;
    }
}

/// AdaIN over a feature batch `[n × C]`: per channel,
/// `σ_s · (f − μ_c) / σ_c + μ_s`.
pub fn adain<T: Real>(
    f: &Tensor<T>,
    mu_c: &[T],
    sigma_c: &[T],
    mu_s: &[T],
    sigma_s: &[T],
) -> Result<Tensor<T>> {
    if f.rank() != 2 || f.shape()[1] != mu_c.len() {
        return Err(Error::shape(
            "adain",
            format!("features {:?} vs {} channels", f.shape(), mu_c.len()),
        ));
    }
    let (scale, shift) = adain_scale_shift(mu_c, sigma_c, mu_s, sigma_s)?;
    let mut out = f.clone();
    for i in 0..out.rows() {
        adain_apply_row(out.row_mut(i), &scale, &shift);
    }
    Ok(out)
}

/// Exponential-moving-average channel statistics of the scene's content
/// features, accumulated over training batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentStats<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    /// EMA retention factor in `[0, 1)`; 0 keeps only the latest batch.
    pub decay: T,
    pub initialized: bool,
}

impl<T: Real> ContentStats<T> {
    pub fn new(channels: usize, decay: T) -> Result<Self> {
        if decay < T::zero() || decay >= T::one() {
            return Err(Error::invalid(
                "ContentStats::new",
                format!("decay must lie in [0, 1), got {}", decay.as_f64()),
            ));
        }
        Ok(ContentStats {
            mu: vec![T::zero(); channels],
            sigma: vec![T::one(); channels],
            decay,
            initialized: false,
        })
    }

    /// Folds one feature batch `[n × C]` into the moving average. The first
    /// batch initializes the statistics directly.
    pub fn update(&mut self, batch: &Tensor<T>) -> Result<()> {
        if batch.rank() != 2 || batch.shape()[1] != self.mu.len() {
            return Err(Error::shape(
                "update_content_stats",
                format!("batch {:?} vs {} channels", batch.shape(), self.mu.len()),
            ));
        }
        let (mu_b, sigma_b) = channel_stats(batch)?;
        if !self.initialized {
            self.mu = mu_b;
            self.sigma = sigma_b;
            self.initialized = true;
            return Ok(());
        }
        let d = self.decay;
        let k = T::one() - d;
        for ch in 0..self.mu.len() {
            self.mu[ch] = d * self.mu[ch] + k * mu_b[ch];
            self.sigma[ch] = d * self.sigma[ch] + k * sigma_b[ch];
        }
        Ok(())
    }
}

/// Scene-agnostic per-sample color decoder: content feature → RGB in (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct ColorDecoder<T> {
    /// `[C_V → 64 → 64 → 3]`, sigmoid output.
    pub mlp: MlpParams<T>,
    /// Set after pretraining; the decoder is never trained again.
    pub frozen: bool,
}

const DECODER_HIDDEN: usize = 64;

impl<T: Real> ColorDecoder<T> {
    /// Fresh (unfrozen, untrained) decoder for `content_channels` inputs.
    pub fn init(content_channels: usize, seed: u64) -> Self {
        ColorDecoder {
            mlp: MlpParams::init(
                &[content_channels, DECODER_HIDDEN, DECODER_HIDDEN, 3],
                Activation::Sigmoid,
                seed,
            ),
            frozen: false,
        }
    }

    pub fn content_channels(&self) -> usize {
        self.mlp.in_features()
    }

    /// Decodes one feature row into RGB using a reusable workspace; the hot
    /// path of color rendering and stylization.
    pub fn decode_row(&self, f: &[T], rgb: &mut [T], ws: &mut MlpWorkspace<T>) -> Result<()> {
        self.mlp.forward_ws(f, ws)?;
        rgb.copy_from_slice(ws.output());
        Ok(())
    }

    /// Batch decode `[n × C_V] → [n × 3]`; rows go through the same kernel
    /// as [`ColorDecoder::decode_row`], so both agree bitwise.
    pub fn decode_color(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        if f.rank() != 2 || f.shape()[1] != self.content_channels() {
            return Err(Error::shape(
                "decode_color",
                format!(
                    "features {:?} vs decoder input width {}",
                    f.shape(),
                    self.content_channels()
                ),
            ));
        }
        let (y, _) = mlp_forward(&self.mlp, f)?;
        Ok(y)
    }
}

/// How strongly each pretraining loss term weighs; see [`pretrain_decoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    /// Style-statistics loss weight λ_s.
    pub lambda_s: f64,
    pub steps: usize,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lambda_s: 1.0,
            steps: 1500,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
        }
    }
}

/// One pretraining step's losses, for reporting.
#[derive(Debug, Clone, Copy)]
pub struct PretrainRecord {
    pub step: usize,
    pub content_loss: f64,
    pub style_loss: f64,
}

/// Pretrains the color decoder on image corpora and returns it frozen.
///
/// Each step pairs a random content image with a random style image:
/// the content image's encoded features, upsampled to pixel resolution, are
/// AdaIN-shifted to the style image's feature statistics, giving per-pixel
/// targets `t`. The decoder maps `t` to an image `g`; the content loss asks
/// the re-encoded `g` (upsampled back to pixel resolution) to reproduce `t`,
/// and the style loss asks the channel mean/std of `g`'s features to match
/// the style image's. Gradients flow only into the decoder — the encoder is
/// a fixed random projection.
pub fn pretrain_decoder<T: Real>(
    content_corpus: &[Tensor<T>],
    style_corpus: &[Tensor<T>],
    encoder: &EncoderSpec,
    cfg: &PretrainConfig,
    seed: u64,
    mut on_step: impl FnMut(&PretrainRecord),
) -> Result<ColorDecoder<T>> {
    if content_corpus.is_empty() || style_corpus.is_empty() {
        return Err(Error::invalid(
            "pretrain_decoder",
            "content and style corpora must be nonempty",
        ));
    }
    if cfg.lambda_s < 0.0 {
        return Err(Error::invalid(
            "pretrain_decoder",
            format!("lambda_s must be nonnegative, got {}", cfg.lambda_s),
        ));
    }
    if encoder.kind != EncoderKind::RandomConv {
        return Err(Error::invalid(
            "pretrain_decoder",
            "pretraining needs a differentiable (random_conv) encoder",
        ));
    }
    let enc = Encoder::<T>::from_spec(encoder)?;
    let ch = encoder.channels;
    let mut dec = ColorDecoder::<T>::init(ch, derive_seed(seed, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut adam = AdamState::new_like(&dec.mlp.param_slices());

    for step in 0..cfg.steps {
        let content = &content_corpus[rng.random_range(0..content_corpus.len())];
        let style = &style_corpus[rng.random_range(0..style_corpus.len())];
        let (h, w) = (content.shape()[0], content.shape()[1]);

        // Per-pixel AdaIN targets from content features and style statistics.
        let fc = enc.encode(content, None)?;
        let fs = enc.encode(style, None)?;
        let fc_rows = bilinear_resize(&fc.features, h, w)?.reshape(&[h * w, ch])?;
        let (mu_c, sigma_c) = channel_stats(&fc_rows)?;
        let (mu_s, sigma_s) = channel_stats(&fs.rows())?;
        let t = adain(&fc_rows, &mu_c, &sigma_c, &mu_s, &sigma_s)?;

        // Decode targets to an image and re-encode it.
        let (g_rows, cache) = mlp_forward(&dec.mlp, &t)?;
        let g_img = g_rows.reshape(&[h, w, 3])?;
        let (fg, conv_cache) = enc.encode_cached(&g_img)?;
        let (fh, fw) = (fg.h(), fg.w());
        let fg_px = bilinear_resize(&fg.features, h, w)?;

        let n = (h * w) as f64;
        let c = ch as f64;

        // L_c = MSE(upsampled re-encoded features, t). Its gradient at the
        // native feature resolution goes through the resize transpose.
        let mut content_loss = 0.0f64;
        let mut grad_fg_px = Tensor::zeros(fg_px.shape());
        {
            let gf = grad_fg_px.data_mut();
            for (i, (&a, &b)) in fg_px.data().iter().zip(t.data()).enumerate() {
                let d = (a - b).as_f64();
                content_loss += d * d;
                gf[i] = T::of(2.0 * d / (n * c));
            }
            content_loss /= n * c;
        }
        let mut grad_fg = bilinear_resize_backward(&grad_fg_px, fh, fw)?;

        // L_s = MSE of channel means + MSE of channel stds vs the style
        // image's statistics, at the encoder's native resolution.
        let fg_rows = fg.rows();
        let (mu_g, sigma_g) = channel_stats(&fg_rows)?;
        let mut style_loss = 0.0f64;
        let mut grad_mu_g = vec![T::zero(); ch];
        let mut grad_sigma_g = vec![T::zero(); ch];
        for k in 0..ch {
            let dm = (mu_g[k] - mu_s[k]).as_f64();
            let ds = (sigma_g[k] - sigma_s[k]).as_f64();
            style_loss += dm * dm + ds * ds;
            grad_mu_g[k] = T::of(cfg.lambda_s * 2.0 * dm / c);
            grad_sigma_g[k] = T::of(cfg.lambda_s * 2.0 * ds / c);
        }
        style_loss /= c;

        if cfg.lambda_s > 0.0 {
            let grad_style =
                channel_stats_backward(&fg_rows, &mu_g, &sigma_g, &grad_mu_g, &grad_sigma_g)?;
            for (a, &b) in grad_fg.data_mut().iter_mut().zip(grad_style.data()) {
                *a += b;
            }
        }

        // One backward pass through the frozen encoder, then the decoder.
        let grad_g_img = enc.backward_input(&conv_cache, &grad_fg)?;
        let grad_rows = grad_g_img.reshape(&[h * w, 3])?;
        let (grads, _) = mlp_backward(&dec.mlp, &cache, &grad_rows)?;

        let mut params = dec.mlp.param_slices_mut();
        adam.step(&cfg.adam, &mut params, &grads.slices())?;

        on_step(&PretrainRecord {
            step,
            content_loss,
            style_loss,
        });
    }
    dec.frozen = true;
    Ok(dec)
}
