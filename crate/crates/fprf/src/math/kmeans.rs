//! Lloyd's k-means with k-means++ seeding, deterministic given
//! `(points, k, seed)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Result of a k-means run.
#[derive(Debug, Clone)]
pub struct KmeansResult<T> {
    /// `[k × d]` cluster centers.
    pub centroids: Tensor<T>,
    /// Cluster index per input point; ties go to the lowest cluster index.
    pub assignments: Vec<usize>,
    /// Total squared distance to assigned centroids, recorded after every
    /// assignment phase. Non-increasing from one iteration to the next.
    pub inertia: Vec<f64>,
}

/// Clusters the rows of `points` (`[n × d]`) into `k` groups.
///
/// * seeding is k-means++ driven by a ChaCha8 stream from `seed`;
/// * assignment ties pick the lowest cluster index;
/// * a cluster left empty by an update step is re-seeded to the point
///   farthest from that cluster's previous centroid (points already used for
///   re-seeding in the same round are skipped);
/// * iteration stops when assignments are stable or after `max_iter` rounds.
///
/// All distance arithmetic runs in `f64`; the returned centroids are rounded
/// to the working precision at the end.
pub fn kmeans<T: Real>(
    points: &Tensor<T>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KmeansResult<T>> {
    if points.rank() != 2 {
        return Err(Error::shape(
            "kmeans",
            format!("points must be rank 2, got {:?}", points.shape()),
        ));
    }
    let n = points.rows();
    let d = points.shape()[1];
    if k == 0 {
        return Err(Error::invalid("kmeans", "k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(
            "kmeans",
            format!("k = {k} exceeds the number of points ({n})"),
        ));
    }

    let pts: Vec<f64> = points.data().iter().map(|v| v.as_f64()).collect();
    let row = |i: usize| &pts[i * d..(i + 1) * d];
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            let diff = x - y;
            acc += diff * diff;
        }
        acc
    };

    // k-means++ seeding.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut best = vec![f64::INFINITY; n];
    while centroids.len() < k * d {
        let last = &centroids[centroids.len() - d..];
        for i in 0..n {
            let dd = dist2(row(i), last);
            if dd < best[i] {
                best[i] = dd;
            }
        }
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if r < b {
                    pick = i;
                    break;
                }
                r -= b;
            }
            pick
        } else {
            // All remaining mass is zero (duplicate-heavy input); take the
            // first point not already chosen as a centroid.
            (0..n)
                .find(|&i| {
                    (0..centroids.len() / d).all(|c| dist2(row(i), &centroids[c * d..c * d + d]) > 0.0)
                })
                .unwrap_or(0)
        };
        centroids.extend_from_slice(row(next));
    }

    let mut assignments = vec![0usize; n];
    let mut inertia = Vec::new();
    for _ in 0..max_iter.max(1) {
        // Assignment phase.
        let mut total = 0.0;
        let mut changed = false;
        for i in 0..n {
            let p = row(i);
            let mut best_c = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = dist2(p, &centroids[c * d..c * d + d]);
                if dd < best_d {
                    best_d = dd;
                    best_c = c;
                }
            }
            total += best_d;
            if assignments[i] != best_c {
                assignments[i] = best_c;
                changed = true;
            }
        }
        let first_round = inertia.is_empty();
        inertia.push(total);
        if !changed && !first_round {
            break;
        }

        // Update phase: means of members.
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c * d..c * d + d].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        let mut reseeded: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids[c * d..c * d + d].iter_mut().zip(&sums[c * d..c * d + d])
                {
                    *dst = s * inv;
                }
            } else {
                // Re-seed to the point farthest from the stale centroid.
                let stale: Vec<f64> = centroids[c * d..c * d + d].to_vec();
                let mut far_i = 0usize;
                let mut far_d = -1.0;
                for i in 0..n {
                    if reseeded.contains(&i) {
                        continue;
                    }
                    let dd = dist2(row(i), &stale);
                    if dd > far_d {
                        far_d = dd;
                        far_i = i;
                    }
                }
                reseeded.push(far_i);
                centroids[c * d..c * d + d].copy_from_slice(row(far_i));
            }
        }
    }

    let centroids = Tensor::from_vec(&[k, d], centroids.iter().map(|&v| T::of(v)).collect())?;
    Ok(KmeansResult {
        centroids,
        assignments,
        inertia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_points() -> Tensor<f32> {
        // Two tight blobs around (0, 0) and (10, 10).
        let mut data = Vec::new();
        for i in 0..20 {
            let j = (i % 5) as f32 * 0.01;
            if i < 10 {
                data.extend_from_slice(&[j, -j]);
            } else {
                data.extend_from_slice(&[10.0 + j, 10.0 - j]);
            }
        }
        Tensor::from_vec(&[20, 2], data).unwrap()
    }

    #[test]
    fn two_blobs_recover_centers() {
        let pts = blob_points();
        let r = kmeans(&pts, 2, 3, 50).unwrap();
        // Blob means: (0.02, -0.02) and (10.02, 9.98).
        let mut found_origin = false;
        let mut found_far = false;
        for c in 0..2 {
            let cx = r.centroids.at2(c, 0);
            let cy = r.centroids.at2(c, 1);
            if (cx - 0.02).abs() < 1e-6 && (cy + 0.02).abs() < 1e-6 {
                found_origin = true;
            }
            if (cx - 10.02).abs() < 1e-6 && (cy - 9.98).abs() < 1e-6 {
                found_far = true;
            }
        }
        assert!(found_origin && found_far, "centroids {:?}", r.centroids);
        // Members of one blob share one label.
        for i in 1..10 {
            assert_eq!(r.assignments[i], r.assignments[0]);
        }
        for i in 11..20 {
            assert_eq!(r.assignments[i], r.assignments[10]);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = blob_points();
        let a = kmeans(&pts, 3, 17, 50).unwrap();
        let b = kmeans(&pts, 3, 17, 50).unwrap();
        assert_eq!(a.assignments, b.assignments);
        for (x, y) in a.centroids.data().iter().zip(b.centroids.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn inertia_is_non_increasing() {
        let pts = Tensor::<f32>::from_fn(&[64, 3], |i| ((i * 37 % 97) as f32) / 9.7);
        let r = kmeans(&pts, 5, 11, 100).unwrap();
        for w in r.inertia.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "inertia increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn n_equals_k_gives_zero_inertia() {
        let pts = Tensor::<f32>::from_fn(&[6, 2], |i| i as f32);
        let r = kmeans(&pts, 6, 0, 50).unwrap();
        assert!(r.inertia.last().unwrap() < &1e-12);
        let mut seen = r.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6, "every point in its own cluster");
    }

    #[test]
    fn k_larger_than_n_is_an_error() {
        let pts = Tensor::<f32>::zeros(&[3, 2]);
        assert!(kmeans(&pts, 4, 0, 10).is_err());
        assert!(kmeans(&pts, 0, 0, 10).is_err());
    }
}
