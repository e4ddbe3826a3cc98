//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_LLOYD_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<const D: usize> {
    pub centroids: Vec<[f64; D]>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the centroid closest to `p`; ties go to the lowest index.
pub fn nearest<const D: usize>(p: &[f64; D], centroids: &[[f64; D]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn seed_plus_plus<const D: usize>(points: &[[f64; D]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; D]> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight implies a positive entry")
        } else {
            // every point coincides with a centroid already
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next]);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(dist2(p, &points[next]));
        }
    }
    centroids
}

/// Partitions `points` into `k` clusters. Empty clusters are re-seeded at
/// the point farthest from its current centroid.
pub fn kmeans<const D: usize>(points: &[[f64; D]], k: usize, seed: u64) -> Result<KMeansResult<D>> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERS {
        iterations += 1;
        let mut sums = vec![[0.0; D]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for d in 0..D {
                sums[a][d] += p[d];
            }
        }
        let mut reseeded: Vec<usize> = Vec::new();
        for j in 0..k {
            if counts[j] > 0 {
                for d in 0..D {
                    centroids[j][d] = sums[j][d] / counts[j] as f64;
                }
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .filter(|i| !reseeded.contains(i))
                    .max_by(|&a, &b| {
                        let da = dist2(&points[a], &centroids[assignments[a]]);
                        let db = dist2(&points[b], &centroids[assignments[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("k ≤ n leaves a point to re-seed with");
                reseeded.push(far);
                centroids[j] = points[far];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignments && reseeded.is_empty() {
            break;
        }
        assignments = next;
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_blobs_are_recovered() {
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pts = Vec::new();
        for c in &centres {
            for _ in 0..30 {
                pts.push([c[0] + rng.random::<f64>() - 0.5, c[1] + rng.random::<f64>() - 0.5]);
            }
        }
        let res = kmeans(&pts, 3, 7).unwrap();
        for blob in 0..3 {
            let label = res.assignments[blob * 30];
            assert!(res.assignments[blob * 30..(blob + 1) * 30].iter().all(|&a| a == label));
        }
        let mut labels: Vec<usize> = (0..3).map(|b| res.assignments[b * 30]).collect();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn k_equals_n_puts_each_point_alone() {
        let pts = [[0.0], [1.0], [5.0], [9.0]];
        let res = kmeans(&pts, 4, 1).unwrap();
        let mut a = res.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn identical_points_do_not_hang() {
        let pts = [[1.0, 1.0]; 6];
        let res = kmeans(&pts, 3, 2).unwrap();
        assert_eq!(res.assignments.len(), 6);
        assert!(res.iterations <= MAX_LLOYD_ITERS);
    }

    #[test]
    fn deterministic() {
        let pts: Vec<[f64; 2]> = (0..50).map(|i| [(i * 37 % 11) as f64, (i * 13 % 7) as f64]).collect();
        assert_eq!(kmeans(&pts, 5, 3).unwrap(), kmeans(&pts, 5, 3).unwrap());
    }

    #[test]
    fn bad_k() {
        assert!(kmeans(&[[0.0]], 0, 0).is_err());
        assert!(kmeans(&[[0.0]], 2, 0).is_err());
    }
}
