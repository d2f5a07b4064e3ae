//! k-means with k-means++ seeding and Lloyd iterations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            // guard against rounding landing on an already chosen point
            if d2[idx] == 0.0 {
                idx = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` into `k` groups. Requires `points.len() >= k >= 1`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> KMeans {
    assert!(k >= 1 && points.len() >= k, "need at least k points");
    let dim = points[0].len();
    let mut rng = rng::stream(seed, "kmeans++", k as u64);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut labels = vec![0; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids);
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            sums[*l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|x| if c > 0 { x / c as f64 } else { 0.0 }).collect())
            .collect();
        for j in 0..k {
            if counts[j] == 0 {
                // reseed to the point farthest from its current centroid
                let far = (0..points.len())
                    .map(|i| (i, sq_dist(&points[i], &next[labels[i]])))
                    .fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b })
                    .0;
                next[j] = points[far].clone();
                labels[far] = j;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    for (l, p) in labels.iter_mut().zip(points) {
        *l = nearest(p, &centroids);
    }
    let inertia = labels.iter().zip(points).map(|(l, p)| sq_dist(p, &centroids[*l])).sum();
    KMeans {
        centroids,
        labels,
        inertia,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(k: usize, per: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for c in 0..k {
            let centre = [10.0 * spread * c as f64, -7.0 * spread * (c % 2) as f64];
            for _ in 0..per {
                pts.push(vec![
                    centre[0] + rng.gen_range(-spread..spread),
                    centre[1] + rng.gen_range(-spread..spread),
                ]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn recovers_separated_blobs() {
        for seed in 0..5 {
            let (pts, truth) = blobs(5, 20, 1.0, seed);
            let km = kmeans(&pts, 5, seed);
            assert!(same_partition(&km.labels, &truth));
        }
    }

    #[test]
    fn k_equals_m_is_exact() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = kmeans(&pts, 6, 3);
        assert_eq!(km.inertia, 0.0);
        let mut l = km.labels.clone();
        l.sort();
        assert_eq!(l, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn duplicated_data_gives_same_centroids() {
        let (pts, _) = blobs(5, 10, 1.0, 9);
        let doubled: Vec<Vec<f64>> = pts.iter().chain(pts.iter()).cloned().collect();
        let a = kmeans(&pts, 5, 1);
        let b = kmeans(&doubled, 5, 1);
        let mut ca = a.centroids.clone();
        let mut cb = b.centroids.clone();
        ca.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in ca.iter().zip(&cb) {
            assert!(sq_dist(x, y).sqrt() < 1e-9);
        }
    }

    #[test]
    fn labels_are_argmin_after_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let km = kmeans(&pts, 5, 2);
        for (p, l) in pts.iter().zip(&km.labels) {
            let d = sq_dist(p, &km.centroids[*l]);
            assert!(km.centroids.iter().all(|c| d <= sq_dist(p, c)));
        }
    }

    #[test]
    fn identical_points_share_one_label() {
        let pts = vec![vec![1.0, 2.0]; 8];
        let km = kmeans(&pts, 3, 0);
        assert!(km.labels.iter().all(|&l| l == km.labels[0]));
    }
}
