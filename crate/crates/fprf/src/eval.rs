//! Reconstruction and multi-view consistency metrics: PSNR, depth-based
//! image warping, and the masked warp error.
//!
//! The warp takes each target pixel with valid depth, back-projects it to a
//! world point (`p = o + t·dir`, matching the depth convention), projects
//! into the source camera, and bilinearly samples the source image there.
//! A pixel survives into the mask only when the projection lands inside the
//! source frame and agrees with the source view's own depth within `τ` —
//! that last check removes pixels occluded in the source.

use crate::error::{Error, Result};
use crate::render::CameraModel;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB assuming unit peak; identical images
/// return `f64::INFINITY`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if a.len() == 0 {
        return Err(Error::invalid("psnr", "empty image"));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x.as_f64() - y.as_f64();
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Bilinear sample of `img` (`[H × W × C]`) at continuous index-space
/// coordinates (pixel `(u, v)` sits at `(x, y) = (u, v)`); coordinates are
/// clamped to the frame.
fn bilinear_sample<T: Real>(img: &Tensor<T>, y: f64, x: f64, out: &mut [T]) {
    let [h, w, c] = [img.shape()[0], img.shape()[1], img.shape()[2]];
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = T::of(xc - x0 as f64);
    let fy = T::of(yc - y0 as f64);
    let one = T::one();
    for ch in 0..c {
        let v00 = img.data()[(y0 * w + x0) * c + ch];
        let v01 = img.data()[(y0 * w + x1) * c + ch];
        let v10 = img.data()[(y1 * w + x0) * c + ch];
        let v11 = img.data()[(y1 * w + x1) * c + ch];
        let top = v00 * (one - fx) + v01 * fx;
        let bot = v10 * (one - fx) + v11 * fx;
        out[ch] = top * (one - fy) + bot * fy;
    }
}

/// Bilinear sample of a `[H × W × 2]` depth map at continuous index-space
/// coordinates, restricted to the pixels that carry nonzero interpolation
/// weight. `None` when any of those pixels lacks valid depth — the blend
/// has no well-defined distance there.
fn footprint_depth<T: Real>(depth: &Tensor<T>, y: f64, x: f64) -> Option<T> {
    let [h, w] = [depth.shape()[0], depth.shape()[1]];
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let mut acc = T::zero();
    for (py, px, wgt) in [
        (y0, x0, (1.0 - fx) * (1.0 - fy)),
        (y0, x1, fx * (1.0 - fy)),
        (y1, x0, (1.0 - fx) * fy),
        (y1, x1, fx * fy),
    ] {
        if wgt == 0.0 {
            continue;
        }
        let i = py * w + px;
        if depth.data()[i * 2 + 1] < T::of(0.5) {
            return None;
        }
        acc = acc + depth.data()[i * 2] * T::of(wgt);
    }
    Some(acc)
}

fn check_depth<T: Real>(which: &'static str, d: &Tensor<T>, cam: &CameraModel<T>) -> Result<()> {
    if d.shape() != [cam.height, cam.width, 2] {
        return Err(Error::shape(
            "warp_image",
            format!(
                "{which} depth {:?} vs camera {}×{}×2",
                d.shape(),
                cam.height,
                cam.width
            ),
        ));
    }
    Ok(())
}

/// Warps the source view into the target view's frame via the target's
/// depth. Returns the warped image `[H × W × C]` and the 0/1 validity mask
/// `[H × W]`; everything outside the mask is left black.
///
/// A target pixel is valid iff its own depth is valid, it projects inside
/// the source frame, and the source view's depth at the projection agrees
/// with the reprojected distance within `τ`. The source depth is sampled
/// exactly like the image — bilinearly — so the compared depth describes
/// the same blend of source pixels the warp reads; a footprint touching a
/// pixel without valid depth has no well-defined depth and is rejected.
/// The depth test is what keeps pixels occluded in the source out of the
/// mask.
///
/// Depth maps are `[H × W × 2]` (ray distance, validity) as produced by the
/// renderer's depth mode and the synthetic ground truth.
pub fn warp_image<T: Real>(
    src_image: &Tensor<T>,
    src_depth: &Tensor<T>,
    cam_src: &CameraModel<T>,
    target_depth: &Tensor<T>,
    cam_target: &CameraModel<T>,
    tau: T,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = (cam_target.height, cam_target.width);
    let (sh, sw) = (cam_src.height, cam_src.width);
    if src_image.rank() != 3 || src_image.shape()[0] != sh || src_image.shape()[1] != sw {
        return Err(Error::shape(
            "warp_image",
            format!("source image {:?} vs camera {sw}×{sh}", src_image.shape()),
        ));
    }
    check_depth("source", src_depth, cam_src)?;
    check_depth("target", target_depth, cam_target)?;
    if tau <= T::zero() {
        return Err(Error::invalid(
            "warp_image",
            format!("tau must be positive, got {}", tau.as_f64()),
        ));
    }
    let c = src_image.shape()[2];
    let mut warped = Tensor::zeros(&[h, w, c]);
    let mut mask = Tensor::zeros(&[h, w]);
    let mut sample = vec![T::zero(); c];

    for v in 0..h {
        for u in 0..w {
            let px = v * w + u;
            if target_depth.data()[px * 2 + 1] < T::of(0.5) {
                continue;
            }
            let t = target_depth.data()[px * 2];
            let ray = cam_target.ray_for_pixel(u, v)?;
            let p = ray.origin + ray.dir * t;
            let Some((sx, sy, _)) = cam_src.project(p) else {
                continue;
            };
            // Continuous pixel-center coordinates; stay a half-pixel inside
            // the frame so the bilinear footprint is fully covered.
            let (sx, sy) = (sx.as_f64(), sy.as_f64());
            if sx < 0.5 || sx > sw as f64 - 0.5 || sy < 0.5 || sy > sh as f64 - 0.5 {
                continue;
            }
            // Occlusion check against the source view's own depth, sampled
            // at the projection the same way the image is.
            let Some(src_d) = footprint_depth(src_depth, sy - 0.5, sx - 0.5) else {
                continue;
            };
            let expected = (p - cam_src.translation).norm();
            if (src_d - expected).abs() >= tau {
                continue;
            }
            bilinear_sample(src_image, sy - 0.5, sx - 0.5, &mut sample);
            warped.data_mut()[px * c..(px + 1) * c].copy_from_slice(&sample);
            mask.data_mut()[px] = T::one();
        }
    }
    Ok((warped, mask))
}

/// Mean squared error between the target image and the warped source image,
/// averaged over the valid-mask pixels only. Errors when the mask is empty
/// (the metric is undefined there).
pub fn warp_error<T: Real>(
    target_image: &Tensor<T>,
    src_image: &Tensor<T>,
    src_depth: &Tensor<T>,
    cam_src: &CameraModel<T>,
    target_depth: &Tensor<T>,
    cam_target: &CameraModel<T>,
    tau: T,
) -> Result<f64> {
    let (warped, mask) = warp_image(src_image, src_depth, cam_src, target_depth, cam_target, tau)?;
    if target_image.shape() != warped.shape() {
        return Err(Error::shape(
            "warp_error",
            format!("target {:?} vs warped {:?}", target_image.shape(), warped.shape()),
        ));
    }
    let c = warped.shape()[2];
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for px in 0..mask.len() {
        if mask.data()[px] > T::of(0.5) {
            for ch in 0..c {
                let d = target_image.data()[px * c + ch].as_f64()
                    - warped.data()[px * c + ch].as_f64();
                acc += d * d;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("warp_error", "empty validity mask"));
    }
    Ok(acc / (n * c) as f64)
}

#[cfg(test)]
mod psnr_tests {
    use super::*;

    #[test]
    fn identical_images_hit_the_sentinel() {
        let img = Tensor::<f64>::from_fn(&[4, 4, 3], |i| (i % 7) as f64 / 7.0);
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
    }

    #[test]
    fn known_mse_maps_to_decibels() {
        // MSE 0.01 → 20 dB.
        let a = Tensor::<f64>::zeros(&[5, 5, 1]);
        let b = Tensor::<f64>::full(&[5, 5, 1], 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        // Uniform 0 vs uniform 0.5 → 10·log10(1/0.25) ≈ 6.0206.
        let c = Tensor::<f64>::full(&[5, 5, 1], 0.5);
        assert!((psnr(&a, &c).unwrap() - 10.0 * 4.0f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        use rand::Rng;
        use rand::SeedableRng;
        let base = Tensor::<f64>::from_fn(&[8, 8, 3], |i| (i % 11) as f64 / 11.0);
        let mut prev = f64::INFINITY;
        for (k, amp) in [0.01, 0.05, 0.2].iter().enumerate() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5 + k as u64);
            let noisy = Tensor::<f64>::from_fn(&[8, 8, 3], |i| {
                base.data()[i] + rng.random_range(-amp..*amp)
            });
            let db = psnr(&base, &noisy).unwrap();
            assert!(db < prev, "amplitude {amp}: {db} dB not below {prev}");
            prev = db;
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Tensor::<f64>::zeros(&[4, 4, 3]);
        let b = Tensor::<f64>::zeros(&[4, 5, 3]);
        assert!(psnr(&a, &b).is_err());
    }
}
