//! Fully connected networks with ReLU hidden layers and a hand-derived
//! reverse-mode backward pass.
//!
//! Conventions, fixed across the crate:
//!
//! * weights are `[out × in]` row-major; biases are one vector per layer;
//! * hidden activations are ReLU with subgradient 0 at exactly 0;
//! * the output layer applies [`Activation::Identity`] or
//!   [`Activation::Sigmoid`];
//! * batched forward/backward iterate rows through the same single-row
//!   kernel, so a batch call and row-by-row calls agree bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Real};
use crate::tensor::Tensor;

/// Output-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
}

/// One affine layer: `y = W x + b` with `W` stored `[out × in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LinearLayer<T> {
    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// MLP parameters: a stack of affine layers with ReLU between them and
/// `output_activation` after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<LinearLayer<T>>,
    pub output_activation: Activation,
}

impl<T: Real> MlpParams<T> {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases
    /// zero. Layers are filled in order from a single ChaCha8 stream, so the
    /// parameters are a pure function of `(sizes, seed)`.
    pub fn init(sizes: &[usize], output_activation: Activation, seed: u64) -> Self {
        assert!(
            sizes.len() >= 2 && sizes.iter().all(|&s| s > 0),
            "mlp needs at least input and output sizes, got {sizes:?}"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Tensor::from_fn(&[fan_out, fan_in], |_| {
                T::of(rng.random_range(-bound..bound))
            });
            layers.push(LinearLayer {
                weight,
                bias: vec![T::zero(); fan_out],
            });
        }
        MlpParams {
            layers,
            output_activation,
        }
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features()
    }

    pub fn out_features(&self) -> usize {
        self.layers[self.layers.len() - 1].out_features()
    }

    /// Flat views over every parameter buffer, weights then bias per layer.
    /// Order matches [`MlpGrads::slices`] so optimizers can zip them.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            let (w, b) = (&mut layer.weight, &mut layer.bias);
            out.push(w.data_mut());
            out.push(b.as_mut_slice());
        }
        out
    }

    /// Immutable counterpart of [`MlpParams::param_slices_mut`].
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.weight.data());
            out.push(layer.bias.as_slice());
        }
        out
    }

    /// Total parameter count.
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Single-row forward writing every post-activation into `ws`.
    ///
    /// `ws.acts[0]` is the input copy and `ws.acts[l+1]` the output of layer
    /// `l` *after* its activation; for ReLU the pre-activation sign is
    /// recoverable from the output, which is all backward needs.
    pub fn forward_ws(&self, x: &[T], ws: &mut MlpWorkspace<T>) -> Result<()> {
        if x.len() != self.in_features() {
            return Err(Error::LayerInputMismatch {
                layer: 0,
                expected: self.in_features(),
                got: x.len(),
            });
        }
        ws.prepare(self);
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            let din = layer.in_features();
            for (j, oj) in out.iter_mut().enumerate() {
                let wrow = &layer.weight.data()[j * din..(j + 1) * din];
                *oj = layer.bias[j] + dot(wrow, input);
            }
            if l < last {
                for v in out.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            } else {
                match self.output_activation {
                    Activation::Identity => {}
                    Activation::Sigmoid => {
                        for v in out.iter_mut() {
                            *v = T::one() / (T::one() + (-*v).exp());
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Single-row backward for the state left by [`MlpParams::forward_ws`].
    ///
    /// Accumulates parameter gradients into `grads` (callers zero or reuse
    /// them across a batch) and, when `grad_x` is given, writes the gradient
    /// with respect to the input row.
    pub fn backward_ws(
        &self,
        grad_y: &[T],
        ws: &mut MlpWorkspace<T>,
        grads: &mut MlpGrads<T>,
        grad_x: Option<&mut [T]>,
    ) {
        let last = self.layers.len() - 1;
        assert_eq!(grad_y.len(), self.out_features(), "grad_y width mismatch");

        // delta = dL/d(pre-activation of current layer)
        ws.delta.clear();
        ws.delta.extend_from_slice(grad_y);
        match self.output_activation {
            Activation::Identity => {}
            Activation::Sigmoid => {
                // y = sigmoid(z); dz = dy * y * (1 - y), y available in acts.
                let y = &ws.acts[last + 1];
                for (d, &yi) in ws.delta.iter_mut().zip(y) {
                    *d = *d * yi * (T::one() - yi);
                }
            }
        }

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let din = layer.in_features();
            let input = &ws.acts[l];
            let g = &mut grads.layers[l];
            for (j, &dj) in ws.delta.iter().enumerate() {
                g.bias[j] += dj;
                let wrow = &mut g.weight.data_mut()[j * din..(j + 1) * din];
                axpy(dj, input, wrow);
            }
            let need_input_grad = l > 0 || grad_x.is_some();
            if need_input_grad {
                ws.delta_prev.clear();
                ws.delta_prev.resize(din, T::zero());
                for (j, &dj) in ws.delta.iter().enumerate() {
                    let wrow = &layer.weight.data()[j * din..(j + 1) * din];
                    axpy(dj, wrow, &mut ws.delta_prev);
                }
                if l > 0 {
                    // ReLU subgradient: pass where the activation is > 0.
                    for (d, &a) in ws.delta_prev.iter_mut().zip(&ws.acts[l]) {
                        if a <= T::zero() {
                            *d = T::zero();
                        }
                    }
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
        if let Some(gx) = grad_x {
            gx.copy_from_slice(&ws.delta);
        }
    }
}

/// Reusable per-row scratch for [`MlpParams::forward_ws`]/`backward_ws`.
#[derive(Debug, Clone, Default)]
pub struct MlpWorkspace<T> {
    /// `acts[0]` = input, `acts[l+1]` = post-activation output of layer `l`.
    pub acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Real> MlpWorkspace<T> {
    pub fn new() -> Self {
        MlpWorkspace {
            acts: Vec::new(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    /// Output row of the most recent forward pass.
    pub fn output(&self) -> &[T] {
        &self.acts[self.acts.len() - 1]
    }

    fn prepare(&mut self, p: &MlpParams<T>) {
        let want = p.layers.len() + 1;
        if self.acts.len() != want {
            self.acts = Vec::with_capacity(want);
            self.acts.push(vec![T::zero(); p.in_features()]);
            for layer in &p.layers {
                self.acts.push(vec![T::zero(); layer.out_features()]);
            }
        } else {
            // Sizes can change if the caller reuses one workspace across
            // different MLPs; resize defensively.
            self.acts[0].resize(p.in_features(), T::zero());
            for (l, layer) in p.layers.iter().enumerate() {
                self.acts[l + 1].resize(layer.out_features(), T::zero());
            }
        }
    }
}

/// Per-layer parameter gradients, same shapes and order as [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads<T> {
    pub layers: Vec<LinearLayer<T>>,
}

impl<T: Real> MlpGrads<T> {
    pub fn zeros_like(p: &MlpParams<T>) -> Self {
        MlpGrads {
            layers: p
                .layers
                .iter()
                .map(|l| LinearLayer {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.data_mut().fill(T::zero());
            l.bias.fill(T::zero());
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            for x in l.weight.data_mut() {
                *x *= s;
            }
            for x in &mut l.bias {
                *x *= s;
            }
        }
    }

    /// Flat views in the order of [`MlpParams::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
        }
        out
    }
}

/// Cache of all activations for a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    /// `acts[0]` is the input batch; `acts[l+1]` the post-activation output
    /// of layer `l`, each `[n × width]`.
    pub acts: Vec<Tensor<T>>,
}

/// Batched forward: `x` is `[n × in]`, result is `[n × out]` plus the cache
/// needed by [`mlp_backward`]. Rows go through the single-row kernel, so the
/// result is bitwise identical to calling it row by row.
pub fn mlp_forward<T: Real>(p: &MlpParams<T>, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
    if x.rank() != 2 {
        return Err(Error::shape("mlp_forward", "input must be rank 2"));
    }
    let n = x.rows();
    let mut acts: Vec<Tensor<T>> = Vec::with_capacity(p.layers.len() + 1);
    acts.push(x.clone());
    for layer in &p.layers {
        acts.push(Tensor::zeros(&[n, layer.out_features()]));
    }
    let mut ws = MlpWorkspace::new();
    for i in 0..n {
        p.forward_ws(x.row(i), &mut ws)?;
        for (l, a) in ws.acts.iter().enumerate().skip(1) {
            acts[l].row_mut(i).copy_from_slice(a);
        }
    }
    let y = acts[acts.len() - 1].clone();
    Ok((y, MlpCache { acts }))
}

/// Batched backward: returns summed parameter gradients and per-row input
/// gradients `[n × in]`.
pub fn mlp_backward<T: Real>(
    p: &MlpParams<T>,
    cache: &MlpCache<T>,
    grad_y: &Tensor<T>,
) -> Result<(MlpGrads<T>, Tensor<T>)> {
    let n = cache.acts[0].rows();
    if grad_y.rank() != 2 || grad_y.rows() != n || grad_y.shape()[1] != p.out_features() {
        return Err(Error::shape(
            "mlp_backward",
            format!(
                "grad_y shape {:?} does not match batch {n} x {}",
                grad_y.shape(),
                p.out_features()
            ),
        ));
    }
    let mut grads = MlpGrads::zeros_like(p);
    let mut grad_x = Tensor::zeros(&[n, p.in_features()]);
    let mut ws = MlpWorkspace::new();
    for i in 0..n {
        // Rebuild the row workspace from the cache.
        ws.prepare(p);
        for (l, a) in cache.acts.iter().enumerate() {
            ws.acts[l].copy_from_slice(a.row(i));
        }
        p.backward_ws(grad_y.row(i), &mut ws, &mut grads, Some(grad_x.row_mut(i)));
    }
    Ok((grads, grad_x))
}
