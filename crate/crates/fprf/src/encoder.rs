//! Fixed 2D feature encoders and feature-map upsampling.
//!
//! Style/content and semantic features come from shallow stacks of seeded
//! random convolutions — frozen random projections that stand in for large
//! pretrained backbones while preserving enough local structure for style
//! statistics and semantic clustering at this scale. An oracle semantic
//! encoder embeds ground-truth region labels instead, for tests that need
//! perfect semantics. Externally computed feature maps can also be ingested
//! from tensor files with a JSON sidecar, so real backbone features can be
//! dropped in.
//!
//! Encoders are never trained; backward passes only propagate gradients to
//! the *input image* (used when pretraining the color decoder through the
//! encoder).

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::guided_filter;
use crate::scalar::{axpy, derive_seed, dot, Real};
use crate::tensor::Tensor;

/// A 2D feature map with its downsampling factor relative to the source
/// image. Feature pixel `(fy, fx)` is centered on image pixel
/// `(fy·stride, fx·stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage<T> {
    /// `[H × W × C]`.
    pub features: Tensor<T>,
    pub stride: usize,
}

impl<T: Real> FeatureImage<T> {
    pub fn new(features: Tensor<T>, stride: usize) -> Result<Self> {
        if features.rank() != 3 {
            return Err(Error::shape(
                "FeatureImage::new",
                format!("expected [H×W×C], got {:?}", features.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("FeatureImage::new", "stride must be ≥ 1"));
        }
        Ok(FeatureImage { features, stride })
    }

    pub fn h(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn w(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[2]
    }

    /// The map flattened to `[H·W × C]` rows.
    pub fn rows(&self) -> Tensor<T> {
        self.features
            .clone()
            .reshape(&[self.h() * self.w(), self.channels()])
            .expect("H*W*C re-grouping cannot change the length")
    }
}

/// Which encoder family to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Seeded random convolution stack over the RGB image.
    RandomConv,
    /// Ground-truth region labels embedded through a seeded map.
    OracleSemantic,
}

/// Full description of an encoder; the realized weights are a pure function
/// of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub seed: u64,
    /// Output feature channels.
    pub channels: usize,
    /// Half-width of the input window one output feature sees, in input
    /// pixels. Informational — derived from the layer plan.
    pub receptive_radius: usize,
    /// Total downsampling factor.
    pub stride: usize,
}

const KERNEL: usize = 5;
const RADIUS: usize = KERNEL / 2;
/// Width of the hidden conv layers.
const MID_CHANNELS: usize = 16;

impl EncoderSpec {
    /// Style/content encoder: two 5×5 convolutions, ReLU between, total
    /// stride 2.
    pub fn style(channels: usize, seed: u64) -> Self {
        EncoderSpec {
            kind: EncoderKind::RandomConv,
            seed,
            channels,
            receptive_radius: RADIUS + RADIUS * 2,
            stride: 2,
        }
    }

    /// Semantic encoder: three 5×5 convolutions with a wider receptive
    /// field, total stride 4.
    pub fn semantic(channels: usize, seed: u64) -> Self {
        EncoderSpec {
            kind: EncoderKind::RandomConv,
            seed,
            channels,
            receptive_radius: RADIUS + RADIUS * 2 + RADIUS * 4,
            stride: 4,
        }
    }

    /// Oracle semantic encoder reading ground-truth region labels.
    pub fn oracle(channels: usize, seed: u64) -> Self {
        EncoderSpec {
            kind: EncoderKind::OracleSemantic,
            seed,
            channels,
            receptive_radius: 1,
            stride: 1,
        }
    }
}

/// One convolution layer: 5×5 kernel, replicate padding, no bias. Weights
/// are `[cout × (5·5·cin)]` rows so an output feature is one dot product
/// against an im2col patch row.
#[derive(Debug, Clone, PartialEq)]
struct ConvLayer<T> {
    weight: Tensor<T>,
    cin: usize,
    cout: usize,
    stride: usize,
    relu: bool,
}

impl<T: Real> ConvLayer<T> {
    fn init(cin: usize, cout: usize, stride: usize, relu: bool, seed: u64) -> Self {
        let fan_in = KERNEL * KERNEL * cin;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Tensor::from_fn(&[cout, fan_in], |_| T::of(rng.random_range(-bound..bound)));
        ConvLayer {
            weight,
            cin,
            cout,
            stride,
            relu,
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    /// Fills `patch` with the replicate-padded 5×5 window of `input` whose
    /// center is `(oy·stride, ox·stride)`.
    fn gather_patch(&self, input: &Tensor<T>, oy: usize, ox: usize, patch: &mut [T]) {
        let (h, w) = (input.shape()[0], input.shape()[1]);
        let cy = oy * self.stride;
        let cx = ox * self.stride;
        let data = input.data();
        let mut at = 0;
        for dy in 0..KERNEL {
            let y = (cy + dy).saturating_sub(RADIUS).min(h - 1);
            for dx in 0..KERNEL {
                let x = (cx + dx).saturating_sub(RADIUS).min(w - 1);
                let base = (y * w + x) * self.cin;
                patch[at..at + self.cin].copy_from_slice(&data[base..base + self.cin]);
                at += self.cin;
            }
        }
    }

    fn forward(&self, input: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (input.shape()[0], input.shape()[1]);
        let (oh, ow) = self.out_dims(h, w);
        let mut out = Tensor::zeros(&[oh, ow, self.cout]);
        let mut patch = vec![T::zero(); KERNEL * KERNEL * self.cin];
        let odata = out.data_mut();
        for oy in 0..oh {
            for ox in 0..ow {
                self.gather_patch(input, oy, ox, &mut patch);
                let base = (oy * ow + ox) * self.cout;
                for co in 0..self.cout {
                    let mut v = dot(self.weight.row(co), &patch);
                    if self.relu && v < T::zero() {
                        v = T::zero();
                    }
                    odata[base + co] = v;
                }
            }
        }
        out
    }

    /// Gradient with respect to the layer input, given the gradient at the
    /// layer output (already masked by the caller if this layer has a ReLU).
    fn backward_input(&self, input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (input_shape[0], input_shape[1]);
        let (oh, ow) = self.out_dims(h, w);
        debug_assert_eq!(grad_out.shape(), [oh, ow, self.cout]);
        let mut grad_in = Tensor::zeros(&[h, w, self.cin]);
        let mut gpatch = vec![T::zero(); KERNEL * KERNEL * self.cin];
        let gdata = grad_out.data();
        for oy in 0..oh {
            for ox in 0..ow {
                gpatch.fill(T::zero());
                let base = (oy * ow + ox) * self.cout;
                for co in 0..self.cout {
                    axpy(gdata[base + co], self.weight.row(co), &mut gpatch);
                }
                // Scatter the patch gradient back through the same replicate
                // padding map the forward gather used.
                let cy = oy * self.stride;
                let cx = ox * self.stride;
                let gi = grad_in.data_mut();
                let mut at = 0;
                for dy in 0..KERNEL {
                    let y = (cy + dy).saturating_sub(RADIUS).min(h - 1);
                    for dx in 0..KERNEL {
                        let x = (cx + dx).saturating_sub(RADIUS).min(w - 1);
                        let dst = (y * w + x) * self.cin;
                        for ci in 0..self.cin {
                            gi[dst + ci] += gpatch[at + ci];
                        }
                        at += self.cin;
                    }
                }
            }
        }
        grad_in
    }
}

/// Post-activation maps of every stage of a conv encoder forward pass;
/// `acts[0]` is the input image.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    acts: Vec<Tensor<T>>,
}

/// A realized encoder: either a conv stack with materialized weights or the
/// oracle label embedder.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    pub spec: EncoderSpec,
    layers: Vec<ConvLayer<T>>,
}

impl<T: Real> Encoder<T> {
    /// Materializes the encoder weights described by `spec`.
    pub fn from_spec(spec: &EncoderSpec) -> Result<Self> {
        if spec.channels == 0 {
            return Err(Error::invalid("Encoder::from_spec", "channels must be ≥ 1"));
        }
        let plans: Vec<(usize, usize, usize, bool)> = match (spec.kind, spec.stride) {
            (EncoderKind::OracleSemantic, 1) => Vec::new(),
            (EncoderKind::OracleSemantic, s) => {
                return Err(Error::invalid(
                    "Encoder::from_spec",
                    format!("oracle encoder supports stride 1 only, got {s}"),
                ));
            }
            (EncoderKind::RandomConv, 2) => vec![
                (3, MID_CHANNELS, 2, true),
                (MID_CHANNELS, spec.channels, 1, false),
            ],
            (EncoderKind::RandomConv, 4) => vec![
                (3, MID_CHANNELS, 2, true),
                (MID_CHANNELS, MID_CHANNELS, 2, true),
                (MID_CHANNELS, spec.channels, 1, false),
            ],
            (EncoderKind::RandomConv, s) => {
                return Err(Error::invalid(
                    "Encoder::from_spec",
                    format!("random_conv supports total stride 2 or 4, got {s}"),
                ));
            }
        };
        let layers = plans
            .iter()
            .enumerate()
            .map(|(l, &(cin, cout, stride, relu))| {
                ConvLayer::init(cin, cout, stride, relu, derive_seed(spec.seed, 10 + l as u64))
            })
            .collect();
        Ok(Encoder {
            spec: spec.clone(),
            layers,
        })
    }

    /// Encodes an RGB image `[H × W × 3]`. The oracle kind requires the
    /// label map.
    pub fn encode(
        &self,
        image: &Tensor<T>,
        labels: Option<&Tensor<T>>,
    ) -> Result<FeatureImage<T>> {
        check_rgb(image)?;
        match self.spec.kind {
            EncoderKind::RandomConv => {
                let mut cache = ConvCache { acts: Vec::new() };
                self.conv_forward(image, &mut cache)?;
                FeatureImage::new(cache.acts.pop().unwrap(), self.spec.stride)
            }
            EncoderKind::OracleSemantic => {
                let labels = labels.ok_or_else(|| {
                    Error::invalid("encode_semantic", "oracle encoder requires a label map")
                })?;
                self.encode_oracle(image, labels)
            }
        }
    }

    /// Conv forward that also returns the activation cache needed by
    /// [`Encoder::backward_input`]. Errors for the oracle kind, which has no
    /// differentiable path.
    pub fn encode_cached(&self, image: &Tensor<T>) -> Result<(FeatureImage<T>, ConvCache<T>)> {
        check_rgb(image)?;
        if self.spec.kind != EncoderKind::RandomConv {
            return Err(Error::invalid(
                "Encoder::encode_cached",
                "only conv encoders support gradient propagation",
            ));
        }
        let mut cache = ConvCache { acts: Vec::new() };
        self.conv_forward(image, &mut cache)?;
        let features = cache.acts.last().unwrap().clone();
        Ok((FeatureImage::new(features, self.spec.stride)?, cache))
    }

    fn conv_forward(&self, image: &Tensor<T>, cache: &mut ConvCache<T>) -> Result<()> {
        cache.acts.clear();
        cache.acts.push(image.clone());
        for layer in &self.layers {
            let next = layer.forward(cache.acts.last().unwrap());
            cache.acts.push(next);
        }
        Ok(())
    }

    /// Gradient with respect to the input image, given the gradient at the
    /// encoder output (native feature resolution `[H' × W' × C]`).
    pub fn backward_input(&self, cache: &ConvCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let top = cache.acts.last().unwrap();
        if grad_out.shape() != top.shape() {
            return Err(Error::shape(
                "Encoder::backward_input",
                format!("grad {:?} vs features {:?}", grad_out.shape(), top.shape()),
            ));
        }
        let mut grad = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                // ReLU mask from the stored post-activation.
                for (g, &a) in grad.data_mut().iter_mut().zip(cache.acts[l + 1].data()) {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            grad = layer.backward_input(cache.acts[l].shape(), &grad);
        }
        Ok(grad)
    }

    fn encode_oracle(&self, image: &Tensor<T>, labels: &Tensor<T>) -> Result<FeatureImage<T>> {
        let (h, w) = (image.shape()[0], image.shape()[1]);
        if labels.rank() != 2 || labels.shape() != [h, w] {
            return Err(Error::shape(
                "encode_semantic",
                format!("label map {:?} vs image {h}×{w}", labels.shape()),
            ));
        }
        let c = self.spec.channels;
        let mut raw = Tensor::zeros(&[h, w, c]);
        let mut embeddings: std::collections::HashMap<u64, Vec<T>> =
            std::collections::HashMap::new();
        {
            let rdata = raw.data_mut();
            for (px, &lv) in labels.data().iter().enumerate() {
                let lf = lv.as_f64();
                if lf.fract() != 0.0 || !(0.0..65536.0).contains(&lf) {
                    return Err(Error::invalid(
                        "encode_semantic",
                        format!("label values must be small nonnegative integers, got {lf}"),
                    ));
                }
                let id = lf as u64;
                let emb = embeddings.entry(id).or_insert_with(|| {
                    // Each region ID owns a fixed seeded embedding, identical
                    // across images and independent of which IDs co-occur.
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(self.spec.seed, 0x0EAC1E + id));
                    (0..c).map(|_| T::of(rng.random_range(-1.0..1.0))).collect()
                });
                rdata[px * c..(px + 1) * c].copy_from_slice(emb);
            }
        }
        FeatureImage::new(box_smooth_3x3(&raw), 1)
    }
}

/// 3×3 box filter with replicate borders, applied per channel.
fn box_smooth_3x3<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Tensor::zeros(&[h, w, c]);
    let idata = img.data();
    let odata = out.data_mut();
    let ninth = T::of(1.0 / 9.0);
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * c;
            for dy in -1i64..=1 {
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for dx in -1i64..=1 {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let src = (yy * w + xx) * c;
                    for ch in 0..c {
                        odata[base + ch] += idata[src + ch];
                    }
                }
            }
            for ch in 0..c {
                odata[base + ch] *= ninth;
            }
        }
    }
    out
}

fn check_rgb<T: Real>(image: &Tensor<T>) -> Result<()> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(Error::shape(
            "encode",
            format!("expected an RGB image [H×W×3], got {:?}", image.shape()),
        ));
    }
    Ok(())
}

/// Style/content features of an RGB image (convenience over a one-shot
/// [`Encoder`]). Use an [`Encoder`] directly inside loops to avoid
/// re-materializing weights.
pub fn encode_style<T: Real>(image: &Tensor<T>, spec: &EncoderSpec) -> Result<FeatureImage<T>> {
    if spec.kind != EncoderKind::RandomConv {
        return Err(Error::invalid(
            "encode_style",
            "style features require a random_conv spec",
        ));
    }
    Encoder::from_spec(spec)?.encode(image, None)
}

/// Semantic features of an RGB image; pass the label map iff the spec is
/// the oracle kind.
pub fn encode_semantic<T: Real>(
    image: &Tensor<T>,
    labels: Option<&Tensor<T>>,
    spec: &EncoderSpec,
) -> Result<FeatureImage<T>> {
    Encoder::from_spec(spec)?.encode(image, labels)
}

/// Bilinear resize of `[h × w × c]` to `[out_h × out_w × c]`, pixel centers
/// aligned.
pub fn bilinear_resize<T: Real>(src: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if src.rank() != 3 {
        return Err(Error::shape(
            "bilinear_resize",
            format!("expected [H×W×C], got {:?}", src.shape()),
        ));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", "output dims must be ≥ 1"));
    }
    let (h, w, c) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    let mut out = Tensor::zeros(&[out_h, out_w, c]);
    let sdata = src.data();
    let odata = out.data_mut();
    for oy in 0..out_h {
        let (y0, y1, fy) = resize_coord(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = resize_coord(ox, out_w, w);
            let base = (oy * out_w + ox) * c;
            let one = T::one();
            let w00 = (one - fy) * (one - fx);
            let w01 = (one - fy) * fx;
            let w10 = fy * (one - fx);
            let w11 = fy * fx;
            let i00 = (y0 * w + x0) * c;
            let i01 = (y0 * w + x1) * c;
            let i10 = (y1 * w + x0) * c;
            let i11 = (y1 * w + x1) * c;
            for ch in 0..c {
                odata[base + ch] = w00 * sdata[i00 + ch]
                    + w01 * sdata[i01 + ch]
                    + w10 * sdata[i10 + ch]
                    + w11 * sdata[i11 + ch];
            }
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_resize`]: scatters a gradient at the output
/// resolution back to the source resolution.
pub fn bilinear_resize_backward<T: Real>(
    grad_out: &Tensor<T>,
    src_h: usize,
    src_w: usize,
) -> Result<Tensor<T>> {
    if grad_out.rank() != 3 {
        return Err(Error::shape(
            "bilinear_resize_backward",
            format!("expected [H×W×C], got {:?}", grad_out.shape()),
        ));
    }
    let (out_h, out_w, c) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let mut grad_src = Tensor::zeros(&[src_h, src_w, c]);
    let gdata = grad_out.data();
    let sdata = grad_src.data_mut();
    for oy in 0..out_h {
        let (y0, y1, fy) = resize_coord(oy, out_h, src_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = resize_coord(ox, out_w, src_w);
            let base = (oy * out_w + ox) * c;
            let one = T::one();
            let w00 = (one - fy) * (one - fx);
            let w01 = (one - fy) * fx;
            let w10 = fy * (one - fx);
            let w11 = fy * fx;
            let i00 = (y0 * src_w + x0) * c;
            let i01 = (y0 * src_w + x1) * c;
            let i10 = (y1 * src_w + x0) * c;
            let i11 = (y1 * src_w + x1) * c;
            for ch in 0..c {
                let g = gdata[base + ch];
                sdata[i00 + ch] += w00 * g;
                sdata[i01 + ch] += w01 * g;
                sdata[i10 + ch] += w10 * g;
                sdata[i11 + ch] += w11 * g;
            }
        }
    }
    Ok(grad_src)
}

/// Source interpolation coordinates for output index `o` of `out_n` mapped
/// into `src_n` samples: low index, high index, fraction.
fn resize_coord<T: Real>(o: usize, out_n: usize, src_n: usize) -> (usize, usize, T) {
    let pos = (o as f64 + 0.5) * src_n as f64 / out_n as f64 - 0.5;
    let pos = pos.clamp(0.0, (src_n - 1) as f64);
    let i0 = (pos.floor() as usize).min(src_n - 1);
    let i1 = (i0 + 1).min(src_n - 1);
    (i0, i1, T::of(pos - i0 as f64))
}

/// Guided-filter parameters for [`upsample_to_pixels`].
pub const UPSAMPLE_GUIDED_RADIUS: usize = 4;
pub const UPSAMPLE_GUIDED_EPS: f64 = 1e-3;

/// Upsamples a feature map to the guide image's pixel resolution: bilinear
/// resize followed by a guided filter that snaps feature transitions to the
/// guide's edges.
pub fn upsample_to_pixels<T: Real>(
    fmap: &FeatureImage<T>,
    guide_rgb: &Tensor<T>,
) -> Result<FeatureImage<T>> {
    check_rgb(guide_rgb)?;
    let (gh, gw) = (guide_rgb.shape()[0], guide_rgb.shape()[1]);
    if gh != fmap.h() * fmap.stride || gw != fmap.w() * fmap.stride {
        return Err(Error::shape(
            "upsample_to_pixels",
            format!(
                "guide {gh}×{gw} does not match {}×{} features at stride {}",
                fmap.h(),
                fmap.w(),
                fmap.stride
            ),
        ));
    }
    let up = bilinear_resize(&fmap.features, gh, gw)?;
    let refined = guided_filter(guide_rgb, &up, UPSAMPLE_GUIDED_RADIUS, UPSAMPLE_GUIDED_EPS)?;
    FeatureImage::new(refined, 1)
}

/// Sidecar metadata stored next to an externally provided feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub stride: usize,
    pub kind: String,
}

/// Writes `features.fpt` plus a `.json` sidecar describing stride and kind.
pub fn save_feature_image<T: Real>(
    path: &Path,
    fmap: &FeatureImage<T>,
    kind: &str,
) -> Result<()> {
    fmap.features.write_fpt(path)?;
    let sidecar = FeatureSidecar {
        stride: fmap.stride,
        kind: kind.to_string(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::format("feature sidecar", path, e.to_string()))?;
    std::fs::write(sidecar_path(path), json).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a feature map written by [`save_feature_image`] (or produced by an
/// external backbone) with its sidecar.
pub fn load_feature_image<T: Real>(path: &Path) -> Result<(FeatureImage<T>, String)> {
    let features = Tensor::read_fpt(path)?;
    let sc_path = sidecar_path(path);
    let json = std::fs::read_to_string(&sc_path).map_err(|e| Error::io(&sc_path, e))?;
    let sidecar: FeatureSidecar = serde_json::from_str(&json)
        .map_err(|e| Error::format("feature sidecar", &sc_path, e.to_string()))?;
    Ok((FeatureImage::new(features, sidecar.stride)?, sidecar.kind))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}
