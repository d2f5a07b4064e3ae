//! Farthest point sampling and DBSCAN denoising.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("requested {requested} samples from {available} points")]
    InsufficientPoints { requested: usize, available: usize },
    #[error("no core point: every point is noise")]
    AllNoise,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Greedy max-min sampling starting from index 0; ties go to the lowest index.
pub fn farthest_point_sample(points: &[Vec3], k: usize) -> Result<Vec<usize>, SamplingError> {
    if k == 0 {
        return Err(SamplingError::InvalidParameter("k must be at least 1"));
    }
    if points.len() < k {
        return Err(SamplingError::InsufficientPoints {
            requested: k,
            available: points.len(),
        });
    }
    Ok(fps_core(points, k, 0, false))
}

/// Lexicographic order on coordinates, used where results must not depend
/// on input order.
pub fn lex_less(a: &Vec3, b: &Vec3) -> bool {
    (a.x, a.y, a.z) < (b.x, b.y, b.z)
}

/// Shared FPS loop. With `lex_ties` the winner among equal distances is the
/// lexicographically smallest point rather than the lowest index.
pub(crate) fn fps_core(points: &[Vec3], k: usize, start: usize, lex_ties: bool) -> Vec<usize> {
    let n = points.len();
    let mut chosen = Vec::with_capacity(k);
    let mut dist = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..k {
        chosen.push(current);
        let c = points[current];
        dist[current] = -1.0;
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for i in 0..n {
            if dist[i] < 0.0 {
                continue;
            }
            let d = (points[i] - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            let di = dist[i];
            if di > best_d || (lex_ties && di == best_d && lex_less(&points[i], &points[best])) {
                best_d = di;
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        current = best;
    }
    chosen
}

fn cell_of(p: &Vec3, eps: f64) -> (i64, i64, i64) {
    (
        (p.x / eps).floor() as i64,
        (p.y / eps).floor() as i64,
        (p.z / eps).floor() as i64,
    )
}

/// Standard DBSCAN; returns the indices (ascending) of the largest cluster,
/// ties going to the cluster with the lowest member index.
pub fn denoise_dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> Result<Vec<usize>, SamplingError> {
    if !(eps > 0.0) {
        return Err(SamplingError::InvalidParameter("eps must be positive"));
    }
    if min_pts == 0 {
        return Err(SamplingError::InvalidParameter("min_pts must be at least 1"));
    }
    let labels = dbscan_labels(points, eps, min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    if n_clusters == 0 {
        return Err(SamplingError::AllNoise);
    }
    let mut size = vec![0usize; n_clusters];
    let mut min_idx = vec![usize::MAX; n_clusters];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            size[*c] += 1;
            min_idx[*c] = min_idx[*c].min(i);
        }
    }
    let best = (0..n_clusters)
        .max_by(|&a, &b| size[a].cmp(&size[b]).then(min_idx[b].cmp(&min_idx[a])))
        .expect("at least one cluster");
    Ok(labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == Some(best))
        .map(|(i, _)| i)
        .collect())
}

/// Cluster label per point (`None` = noise).
pub fn dbscan_labels(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    // Very large eps would overflow the grid; fall back to a single cell.
    let use_grid = points.iter().all(|p| (p / eps).amax() < 1e12);
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    if use_grid {
        for (i, p) in points.iter().enumerate() {
            grid.entry(cell_of(p, eps)).or_default().push(i);
        }
    }
    let eps2 = eps * eps;
    let neighbours = |i: usize| -> Vec<usize> {
        let p = points[i];
        if !use_grid {
            return (0..n).filter(|&j| (points[j] - p).norm_squared() <= eps2).collect();
        }
        let (cx, cy, cz) = cell_of(&p, eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(v.iter().copied().filter(|&j| (points[j] - p).norm_squared() <= eps2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = neighbours(i);
        if nb.len() < min_pts {
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = Some(id);
        let mut queue: VecDeque<usize> = nb.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nbj = neighbours(j);
            if nbj.len() >= min_pts {
                queue.extend(nbj);
            }
        }
    }
    labels
}
