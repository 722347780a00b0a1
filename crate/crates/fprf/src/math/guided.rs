//! Guided image filtering for edge-aware feature upsampling.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Edge-preserving filter of `input` steered by `guide`.
///
/// * `guide` is `[h × w × cg]` and is reduced to grayscale (channel mean)
///   before use; `input` is `[h × w × cp]`, filtered channel by channel.
/// * Windows are `(2r+1)²` boxes clamped at the image border, with means
///   taken over the actual overlap; box sums use integral images.
/// * Per pixel: `a = cov(I, p) / (var(I) + eps)`, `b = mean(p) - a·mean(I)`,
///   and the output is `mean(a)·I + mean(b)` with the coefficient means taken
///   over the same windows.
///
/// All intermediate arithmetic is `f64`; only the final image is rounded to
/// the working precision.
pub fn guided_filter<T: Real>(
    guide: &Tensor<T>,
    input: &Tensor<T>,
    radius: usize,
    eps: f64,
) -> Result<Tensor<T>> {
    if guide.rank() != 3 || input.rank() != 3 {
        return Err(Error::shape(
            "guided_filter",
            format!(
                "guide and input must be rank 3, got {:?} and {:?}",
                guide.shape(),
                input.shape()
            ),
        ));
    }
    let (h, w, cg) = (guide.shape()[0], guide.shape()[1], guide.shape()[2]);
    if input.shape()[0] != h || input.shape()[1] != w {
        return Err(Error::shape(
            "guided_filter",
            format!(
                "guide is {h}x{w} but input is {}x{}",
                input.shape()[0],
                input.shape()[1]
            ),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("guided_filter", "eps must be positive"));
    }
    let cp = input.shape()[2];

    // Grayscale guide.
    let inv_cg = 1.0 / cg as f64;
    let mut gray = vec![0.0f64; h * w];
    for (i, g) in gray.iter_mut().enumerate() {
        let px = &guide.data()[i * cg..(i + 1) * cg];
        *g = px.iter().map(|v| v.as_f64()).sum::<f64>() * inv_cg;
    }

    let boxer = BoxFilter::new(h, w, radius);
    let mean_i = boxer.mean(&gray);
    let gray_sq: Vec<f64> = gray.iter().map(|v| v * v).collect();
    let mean_ii = boxer.mean(&gray_sq);
    let var_i: Vec<f64> = mean_ii
        .iter()
        .zip(&mean_i)
        .map(|(ii, i)| ii - i * i)
        .collect();

    let mut out = Tensor::<T>::zeros(&[h, w, cp]);
    let mut p = vec![0.0f64; h * w];
    let mut ip = vec![0.0f64; h * w];
    for ch in 0..cp {
        for i in 0..h * w {
            let v = input.data()[i * cp + ch].as_f64();
            p[i] = v;
            ip[i] = v * gray[i];
        }
        let mean_p = boxer.mean(&p);
        let mean_ip = boxer.mean(&ip);
        // a/b reuse the p/ip buffers once their means are taken.
        for i in 0..h * w {
            let cov = mean_ip[i] - mean_i[i] * mean_p[i];
            let a = cov / (var_i[i] + eps);
            p[i] = a;
            ip[i] = mean_p[i] - a * mean_i[i];
        }
        let mean_a = boxer.mean(&p);
        let mean_b = boxer.mean(&ip);
        for i in 0..h * w {
            out.data_mut()[i * cp + ch] = T::of(mean_a[i] * gray[i] + mean_b[i]);
        }
    }
    Ok(out)
}

/// Box-mean filter over border-clamped windows via an integral image.
struct BoxFilter {
    h: usize,
    w: usize,
    r: usize,
    integral: Vec<f64>, // (h+1) x (w+1)
}

impl BoxFilter {
    fn new(h: usize, w: usize, r: usize) -> Self {
        BoxFilter {
            h,
            w,
            r,
            integral: vec![0.0; (h + 1) * (w + 1)],
        }
    }

    fn mean(&self, src: &[f64]) -> Vec<f64> {
        let (h, w, r) = (self.h, self.w, self.r);
        let stride = w + 1;
        // The integral buffer is logically scratch; rebuild it per call.
        let mut integral = self.integral.clone();
        for y in 0..h {
            for x in 0..w {
                integral[(y + 1) * stride + (x + 1)] = src[y * w + x]
                    + integral[y * stride + (x + 1)]
                    + integral[(y + 1) * stride + x]
                    - integral[y * stride + x];
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r).min(h - 1);
            for x in 0..w {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r).min(w - 1);
                let sum = integral[(y1 + 1) * stride + (x1 + 1)]
                    - integral[y0 * stride + (x1 + 1)]
                    - integral[(y1 + 1) * stride + x0]
                    + integral[y0 * stride + x0];
                let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
                out[y * w + x] = sum / count;
            }
        }
        out
    }
}
