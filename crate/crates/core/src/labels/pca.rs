//! PCA by eigendecomposition of the sample covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PcaError {
    #[error("need at least 3 rows, got {0}")]
    TooFewRows(usize),
    #[error("rows have inconsistent lengths")]
    RaggedRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Row-major `components x dim`.
    pub basis: Vec<Vec<f64>>,
    /// Eigenvalues of the retained components.
    pub variances: Vec<f64>,
    pub total_variance: f64,
    /// Fewer than `components` non-zero eigenvalues; the basis was padded
    /// with canonical axes.
    pub rank_deficient: bool,
}

const ZERO_EIGEN_REL: f64 = 1e-12;

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| b.iter().zip(x).zip(&self.mean).map(|((b, x), m)| b * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (b, zi) in self.basis.iter().zip(z) {
            for (o, bj) in out.iter_mut().zip(b) {
                *o += zi * bj;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`components` principal axes of the rows of `data`.
pub fn pca_fit(data: &[Vec<f64>], components: usize) -> Result<Pca, PcaError> {
    let m = data.len();
    if m < 3 {
        return Err(PcaError::TooFewRows(m));
    }
    let d = data[0].len();
    if data.iter().any(|r| r.len() != d) {
        return Err(PcaError::RaggedRows);
    }
    let x = DMatrix::from_fn(m, d, |i, j| data[i][j]);
    let mean: DVector<f64> = x.row_mean().transpose();
    let centred = DMatrix::from_fn(m, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (m as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    // descending eigenvalue; ties resolved by the index of the dominant axis
    let dominant = |k: usize| {
        let col = eig.eigenvectors.column(k);
        (0..d).fold(0, |b, i| if col[i].abs() > col[b].abs() { i } else { b })
    };
    let scale = eig.eigenvalues.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs())).max(1e-300);
    order.sort_by(|&a, &b| {
        let (ea, eb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        if (ea - eb).abs() <= ZERO_EIGEN_REL * scale {
            dominant(a).cmp(&dominant(b))
        } else {
            eb.partial_cmp(&ea).expect("finite eigenvalues")
        }
    });

    let threshold = ZERO_EIGEN_REL * total_variance.abs().max(1e-300);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(components);
    let mut variances = Vec::with_capacity(components);
    for &k in order.iter().take(components) {
        if eig.eigenvalues[k] <= threshold || total_variance <= 0.0 {
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().cloned().collect();
        canonical_sign(&mut v);
        basis.push(v);
        variances.push(eig.eigenvalues[k]);
    }
    let rank_deficient = basis.len() < components;
    // pad with canonical axes, Gram-Schmidt against the rows so far
    let mut axis = 0;
    while basis.len() < components.min(d) {
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        axis += 1;
        for b in &basis {
            let p = dot(&e, b);
            e.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&e, &e).sqrt();
        if n > 1e-6 {
            e.iter_mut().for_each(|x| *x /= n);
            canonical_sign(&mut e);
            basis.push(e);
            variances.push(0.0);
        }
    }
    Ok(Pca {
        mean: mean.iter().cloned().collect(),
        basis,
        variances,
        total_variance,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Cyclic Jacobi eigenvalue solver used as an independent oracle.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[p][q] * a[p][q];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    fn covariance(data: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (m, d) = (data.len(), data[0].len());
        let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / m as f64).collect();
        let mut c = vec![vec![0.0; d]; d];
        for r in data {
            for i in 0..d {
                for j in 0..d {
                    c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (m as f64 - 1.0);
                }
            }
        }
        c
    }

    #[test]
    fn planar_data_reconstructs_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = 30;
        let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let o: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                (0..d).map(|j| o[j] + a * u[j] + b * v[j]).collect()
            })
            .collect();
        let pca = pca_fit(&data, 2).unwrap();
        assert!(!pca.rank_deficient);
        for row in &data {
            let rec = pca.reconstruct(&pca.project(row));
            let err: f64 = rec.iter().zip(row).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn basis_is_orthonormal_and_signed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..12).map(|j| rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64)).collect())
            .collect();
        let pca = pca_fit(&data, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let g = dot(&pca.basis[i], &pca.basis[j]);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
            let big = pca.basis[i].iter().cloned().fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
        }
        let oracle = jacobi_eigenvalues(covariance(&data));
        assert!((pca.variances[0] - oracle[0]).abs() < 1e-8 * oracle[0]);
        assert!((pca.variances[1] - oracle[1]).abs() < 1e-8 * oracle[0]);
    }

    #[test]
    fn isotropic_variance_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 30;
        let data: Vec<Vec<f64>> = (0..4000)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let pca = pca_fit(&data, 2).unwrap();
        let ratio = (pca.variances[0] + pca.variances[1]) / pca.total_variance;
        let oracle = jacobi_eigenvalues(covariance(&data));
        let total: f64 = oracle.iter().sum();
        assert!((ratio - (oracle[0] + oracle[1]) / total).abs() < 1e-9);
        // sampling error of the top eigenvalues for n = 4000, d = 30
        assert!((ratio - 2.0 / d as f64).abs() < 0.03, "{ratio}");
    }

    #[test]
    fn repeated_point_mean_and_fallback() {
        let p: Vec<f64> = (0..9).map(|j| j as f64 * 0.1).collect();
        let data = vec![p.clone(); 5];
        let pca = pca_fit(&data, 2).unwrap();
        assert!(pca.rank_deficient);
        assert_eq!(pca.basis.len(), 2);
        assert!(pca.mean.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(dot(&pca.basis[0], &pca.basis[1]).abs() < 1e-12);
    }

    #[test]
    fn rank_one_is_padded_orthogonally() {
        let dir = [0.6, 0.8, 0.0, 0.0];
        let data: Vec<Vec<f64>> = (0..6).map(|i| dir.iter().map(|d| d * i as f64).collect()).collect();
        let pca = pca_fit(&data, 2).unwrap();
        assert!(pca.rank_deficient);
        assert!((pca.basis[0][0] - 0.6).abs() < 1e-9 && (pca.basis[0][1] - 0.8).abs() < 1e-9);
        assert!(dot(&pca.basis[0], &pca.basis[1]).abs() < 1e-12);
        assert!((dot(&pca.basis[1], &pca.basis[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projector_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Vec<f64>> = (0..20).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let pca = pca_fit(&data, 2).unwrap();
        for row in &data {
            let once = pca.reconstruct(&pca.project(row));
            let twice = pca.reconstruct(&pca.project(&once));
            assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}
