//! Template trajectory database: PCA to 2D, k-means, nearest-to-centre
//! representatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kmeans::{kmeans, nearest};
use super::pca::{pca_fit, Pca, PcaError};
use crate::Vec3;

pub const TEMPLATE_DB_VERSION: u32 = 1;
pub const EMBED_DIM: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("item {0} has no ground-truth trajectory")]
    MissingTrajectory(String),
    #[error("trajectory lengths differ: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("need at least K = {k} items, got {n}")]
    TooFewItems { k: usize, n: usize },
    #[error(transparent)]
    Pca(#[from] PcaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDb {
    pub version: u32,
    pub k: usize,
    pub t: usize,
    pub pca_mean: Vec<f64>,
    pub pca_basis: Vec<Vec<f64>>,
    pub rank_deficient: bool,
    pub centroids: Vec<Vec<f64>>,
    /// Position-only templates in the item frame (metres), index 0 = hanging end.
    pub templates: Vec<Vec<Vec3>>,
    pub template_items: Vec<String>,
    pub template_embeddings: Vec<Vec<f64>>,
}

/// Trajectory relative to its hanging end, flattened to `3T`.
pub fn flatten_relative(positions: &[Vec3]) -> Vec<f64> {
    let origin = positions[0];
    positions.iter().flat_map(|p| (p - origin).iter().cloned().collect::<Vec<_>>()).collect()
}

impl TemplateDb {
    fn pca(&self) -> Pca {
        Pca {
            mean: self.pca_mean.clone(),
            basis: self.pca_basis.clone(),
            variances: vec![],
            total_variance: 0.0,
            rank_deficient: self.rank_deficient,
        }
    }

    pub fn embed(&self, positions: &[Vec3]) -> Vec<f64> {
        self.pca().project(&flatten_relative(positions))
    }

    /// Category of a trajectory: nearest centroid in the embedding.
    pub fn label_of(&self, positions: &[Vec3]) -> usize {
        nearest(&self.embed(positions), &self.centroids)
    }
}

pub struct BuildOutput {
    pub db: TemplateDb,
    /// Category label per input item, in input order.
    pub labels: Vec<usize>,
}

/// Builds the database from one canonical trajectory per training item.
pub fn build_template_db(
    items: &[(String, Option<Vec<Vec3>>)],
    k: usize,
    seed: u64,
) -> Result<BuildOutput, TemplateError> {
    let mut trajs = Vec::with_capacity(items.len());
    for (id, t) in items {
        trajs.push(t.as_ref().ok_or_else(|| TemplateError::MissingTrajectory(id.clone()))?);
    }
    if items.len() < k.max(3) {
        return Err(TemplateError::TooFewItems { k, n: items.len() });
    }
    let t = trajs[0].len();
    if let Some(bad) = trajs.iter().find(|x| x.len() != t) {
        return Err(TemplateError::LengthMismatch {
            expected: t,
            found: bad.len(),
        });
    }
    let flat: Vec<Vec<f64>> = trajs.iter().map(|x| flatten_relative(x)).collect();
    let pca = pca_fit(&flat, EMBED_DIM)?;
    let embedded: Vec<Vec<f64>> = flat.iter().map(|x| pca.project(x)).collect();
    let km = kmeans(&embedded, k, seed);

    let mut templates = Vec::with_capacity(k);
    let mut template_items = Vec::with_capacity(k);
    let mut template_embeddings = Vec::with_capacity(k);
    for c in &km.centroids {
        // closest training embedding to the centre; ties to the lowest index
        let best = (0..embedded.len())
            .map(|i| (i, dist2(&embedded[i], c)))
            .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b })
            .0;
        templates.push(trajs[best].clone());
        template_items.push(items[best].0.clone());
        template_embeddings.push(embedded[best].clone());
    }
    Ok(BuildOutput {
        db: TemplateDb {
            version: TEMPLATE_DB_VERSION,
            k,
            t,
            pca_mean: pca.mean,
            pca_basis: pca.basis,
            rank_deficient: pca.rank_deficient,
            centroids: km.centroids,
            templates,
            template_items,
            template_embeddings,
        },
        labels: km.labels,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
