//! PNG image IO: RGB images as `[H × W × 3]` tensors with values in [0, 1].

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Loads a PNG (or any format the `image` crate sniffs) as RGB in [0, 1].
pub fn load_rgb<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::format("image", path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[h, w, 3]);
    let data = t.data_mut();
    for (i, px) in img.pixels().enumerate() {
        for ch in 0..3 {
            data[i * 3 + ch] = T::of(px.0[ch] as f64 / 255.0);
        }
    }
    Ok(t)
}

/// Saves an RGB tensor `[H × W × 3]` as an 8-bit PNG; values are clamped to
/// [0, 1] before quantization.
pub fn save_rgb<T: Real>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    if img.rank() != 3 || img.shape()[2] != 3 {
        return Err(Error::shape(
            "save_rgb",
            format!("expected [H×W×3], got {:?}", img.shape()),
        ));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    let data = img.data();
    for (i, px) in buf.pixels_mut().enumerate() {
        for ch in 0..3 {
            let v = data[i * 3 + ch].as_f64().clamp(0.0, 1.0);
            px.0[ch] = (v * 255.0).round() as u8;
        }
    }
    buf.save(path)
        .map_err(|e| Error::format("image", path, e.to_string()))
}

/// Loads an 8-bit grayscale PNG as integer values (0–255) in a `[H × W]`
/// tensor. Color inputs take the red channel, which is how region label
/// maps are stored.
pub fn load_labels<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::format("image", path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[h, w]);
    let data = t.data_mut();
    for (i, px) in img.pixels().enumerate() {
        data[i] = T::of(px.0[0] as f64);
    }
    Ok(t)
}

/// Saves integer region labels (0–255) as a grayscale-in-red PNG.
pub fn save_labels<T: Real>(path: impl AsRef<Path>, labels: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    if labels.rank() != 2 {
        return Err(Error::shape(
            "save_labels",
            format!("expected [H×W], got {:?}", labels.shape()),
        ));
    }
    let (h, w) = (labels.shape()[0], labels.shape()[1]);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    let data = labels.data();
    for (i, px) in buf.pixels_mut().enumerate() {
        let v = data[i].as_f64();
        if v.fract() != 0.0 || !(0.0..256.0).contains(&v) {
            return Err(Error::invalid(
                "save_labels",
                format!("label {v} is not an integer in 0..=255"),
            ));
        }
        px.0 = [v as u8, v as u8, v as u8];
    }
    buf.save(path)
        .map_err(|e| Error::format("image", path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = Tensor::<f64>::from_fn(&[5, 7, 3], |i| (i % 11) as f64 / 10.0);
        save_rgb(&path, &img).unwrap();
        let back = load_rgb::<f64>(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-9);
    }

    #[test]
    fn labels_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sem.png");
        let labels = Tensor::<f64>::from_fn(&[4, 6], |i| (i % 5) as f64);
        save_labels(&path, &labels).unwrap();
        let back = load_labels::<f64>(&path).unwrap();
        assert_eq!(back.data(), labels.data());
    }

    #[test]
    fn fractional_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let labels = Tensor::<f64>::from_fn(&[2, 2], |_| 1.5);
        assert!(save_labels(dir.path().join("x.png"), &labels).is_err());
    }
}
