//! Procedural image corpora for decoder pretraining.
//!
//! Small seeded RGB images — value-noise color fields, stripes, checkers,
//! and linear gradients — stand in for photo/painting datasets so the
//! repository is self-contained. External directories of real images are
//! accepted as a drop-in replacement.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::bilinear_resize;
use crate::error::{Error, Result};
use crate::image_io::load_rgb;
use crate::scalar::{derive_seed, Real};
use crate::tensor::Tensor;

/// Generates `n` seeded `size×size` RGB images cycling over the four
/// procedural families.
pub fn procedural_corpus<T: Real>(n: usize, size: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    if n == 0 || size < 8 {
        return Err(Error::invalid(
            "procedural_corpus",
            "need n ≥ 1 images of size ≥ 8",
        ));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            match i % 4 {
                0 => noise_field(size, &mut rng),
                1 => Ok(stripes(size, &mut rng)),
                2 => Ok(checkers(size, &mut rng)),
                _ => Ok(gradient(size, &mut rng)),
            }
        })
        .collect()
}

/// Two-octave value noise: coarse and fine random color lattices upsampled
/// bilinearly and blended.
fn noise_field<T: Real>(size: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let coarse_res = rng.random_range(3..6);
    let fine_res = rng.random_range(7..12);
    let mut lattice = |res: usize| -> Result<Tensor<T>> {
        let lat = Tensor::from_fn(&[res, res, 3], |_| T::of(rng.random_range(0.0..1.0)));
        bilinear_resize(&lat, size, size)
    };
    let coarse = lattice(coarse_res)?;
    let fine = lattice(fine_res)?;
    let w_fine = T::of(rng.random_range(0.2..0.5));
    let w_coarse = T::one() - w_fine;
    let mut out = coarse;
    for (o, &f) in out.data_mut().iter_mut().zip(fine.data()) {
        *o = *o * w_coarse + f * w_fine;
    }
    Ok(out)
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
    ]
}

fn two_color_pattern<T: Real>(
    size: usize,
    rng: &mut ChaCha8Rng,
    mut pick: impl FnMut(usize, usize, usize) -> bool,
) -> Tensor<T> {
    let ca = random_color(rng);
    let cb = random_color(rng);
    let period = rng.random_range(4..=16usize);
    Tensor::from_fn(&[size, size, 3], |i| {
        let ch = i % 3;
        let x = (i / 3) % size;
        let y = i / (3 * size);
        let c = if pick(y, x, period) { ca } else { cb };
        T::of(c[ch])
    })
}

fn stripes<T: Real>(size: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let orient = rng.random_range(0..3usize);
    two_color_pattern(size, rng, move |y, x, p| {
        let t = match orient {
            0 => x,
            1 => y,
            _ => x + y,
        };
        (t / p) % 2 == 0
    })
}

fn checkers<T: Real>(size: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    two_color_pattern(size, rng, |y, x, p| (x / p + y / p) % 2 == 0)
}

fn gradient<T: Real>(size: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let ca = random_color(rng);
    let cb = random_color(rng);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let half = (size - 1) as f64 / 2.0;
    let scale = 1.0 / (2.0 * half.hypot(half));
    Tensor::from_fn(&[size, size, 3], |i| {
        let ch = i % 3;
        let x = ((i / 3) % size) as f64 - half;
        let y = (i / (3 * size)) as f64 - half;
        let t = ((x * dx + y * dy) * scale + 0.5).clamp(0.0, 1.0);
        T::of(ca[ch] * (1.0 - t) + cb[ch] * t)
    })
}

/// Loads every decodable image in a directory, sorted by file name, as a
/// corpus. Errors if none decode.
pub fn load_corpus_dir<T: Real>(dir: impl AsRef<std::path::Path>) -> Result<Vec<Tensor<T>>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png" | "jpg" | "jpeg" | "bmp")
            )
        })
        .collect();
    paths.sort();
    let images: Vec<Tensor<T>> = paths
        .iter()
        .map(|p| load_rgb(p))
        .collect::<Result<_>>()?;
    if images.is_empty() {
        return Err(Error::invalid(
            "load_corpus_dir",
            format!("no images found in {}", dir.display()),
        ));
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::save_rgb;

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let a = procedural_corpus::<f64>(16, 32, 9).unwrap();
        let b = procedural_corpus::<f64>(16, 32, 9).unwrap();
        assert_eq!(a, b);
        for img in &a {
            assert_eq!(img.shape(), [32, 32, 3]);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let c = procedural_corpus::<f64>(16, 32, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn images_are_diverse() {
        let corpus = procedural_corpus::<f64>(8, 32, 3).unwrap();
        for i in 0..corpus.len() {
            for j in i + 1..corpus.len() {
                assert!(
                    corpus[i].max_abs_diff(&corpus[j]) > 0.05,
                    "images {i} and {j} nearly identical"
                );
            }
        }
    }

    #[test]
    fn directory_corpus_loads_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("b.png", 0.25), ("a.png", 0.75)] {
            let img = Tensor::<f64>::full(&[8, 8, 3], v);
            save_rgb(dir.path().join(name), &img).unwrap();
        }
        let corpus = load_corpus_dir::<f64>(dir.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert!((corpus[0].data()[0] - 0.75).abs() < 1e-2, "a.png first");
        assert!((corpus[1].data()[0] - 0.25).abs() < 1e-2);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus_dir::<f64>(dir.path()).is_err());
    }
}
