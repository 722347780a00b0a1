//! Block-composed tri-plane radiance fields with feed-forward photorealistic
//! stylization.
//!
//! The crate trains a pair of neural fields for a scene — a *content* field
//! (density + appearance features + RGB via a frozen color decoder) and a
//! *semantic* field (view-independent matching features) — by distilling
//! per-view feature maps produced by pluggable, seeded encoders. At render
//! time the appearance features of every ray sample are re-normalized against
//! a dictionary of per-cluster style statistics selected by semantic
//! attention, then decoded to color and composited. No per-style optimization
//! is involved: swapping the dictionary restyles the scene immediately.
//!
//! Module map:
//!
//! * [`tensor`], [`scalar`], [`geom`] — dense row-major tensors (with the
//!   `FPT1` file format), the float abstraction shared by the f32/f64 paths,
//!   and small 3D linear algebra.
//! * [`math`] — MLPs with hand-derived backward passes, channel statistics,
//!   row softmax, k-means, guided filtering, positional encoding.
//! * [`field`] — tri-plane grids, block decomposition of the scene box, and
//!   the content/semantic scene fields.
//! * [`render`] — pinhole cameras, ray sampling, and volume rendering of
//!   arbitrary per-sample vectors (with backward pass).
//! * [`encoder`] — seeded convolutional feature encoders, the oracle semantic
//!   encoder, and feature upsampling to pixel resolution.
//! * [`decoder`] — AdaIN, the frozen color decoder and its pretraining, and
//!   running content-feature statistics. [`corpus`] generates the procedural
//!   pretraining images.
//! * [`style_dict`] — clustering reference images into style dictionaries.
//! * [`stylize`] — semantic attention, locally adaptive re-normalization, and
//!   stylized rendering.
//! * [`train`] — Adam, the distillation losses with hand-derived gradients,
//!   and the scene training loop.
//! * [`dataset`], [`eval`] — synthetic scene generation, the on-disk dataset
//!   layout, PSNR, and depth-reprojection warping metrics.
//! * [`container`] — the `FPRF` checkpoint container for fields, decoders and
//!   dictionaries.

pub mod corpus;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod field;
pub mod geom;
pub mod image_io;
pub mod math;
pub mod render;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
