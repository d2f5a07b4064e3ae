//! Central finite-difference check of every parameter tensor.

use ndarray::Array2;
use rand::Rng;

use super::config::ModelConfig;
use super::model::{forward, loss_and_grad, loss_total, LossWeights, ModelParams};
use crate::{rng, Vec3};

/// Step sizes tried per entry. Max-pool and ReLU kinks can fall inside a
/// wide step, so the smallest error over the steps is reported.
pub const FD_EPSILONS: [f64; 3] = [1e-5, 1e-6, 1e-7];
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

/// Random but reproducible inputs and targets for one sample.
pub struct Problem {
    pub points: Vec<Vec3>,
    pub aligned: Vec<Vec3>,
    pub class: usize,
    pub affordance: Vec<f64>,
    pub offsets: Array2<f64>,
}

impl Problem {
    pub fn random(cfg: &ModelConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, "gradcheck-problem", 0);
        let mut unit = || {
            loop {
                let p = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
                if p.norm() <= 1.0 {
                    return p;
                }
            }
        };
        let points: Vec<Vec3> = (0..cfg.n_points).map(|_| unit()).collect();
        let aligned: Vec<Vec3> = (0..cfg.t).map(|_| unit() * 0.8).collect();
        let mut r = rng::stream(seed, "gradcheck-targets", 0);
        let affordance = (0..cfg.n_points).map(|_| r.gen_range(0.0..1.0)).collect();
        let offsets = Array2::from_shape_fn((cfg.t, 3), |_| r.gen_range(-0.2..0.2));
        Problem {
            points,
            aligned,
            class: r.gen_range(0..cfg.k),
            affordance,
            offsets,
        }
    }

    pub fn loss(&self, params: &ModelParams, w: &LossWeights) -> f64 {
        let trace = forward(params, &self.points, &self.aligned, Some(&self.affordance)).expect("valid problem");
        loss_total(&trace, self.class, &self.affordance, &self.offsets, w)
            .expect("valid problem")
            .0
            .total
    }
}

/// Parameters from `init` with every entry jittered, so biases are nonzero
/// and no unit sits exactly on a ReLU kink.
pub fn jittered_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(cfg, seed);
    let mut r = rng::stream(seed, "gradcheck-jitter", 0);
    for s in p.slices_mut() {
        for v in s.iter_mut() {
            *v += r.gen_range(-0.05..0.05);
        }
    }
    p
}

/// Checks up to `per_tensor` randomly chosen entries of every tensor.
pub fn check(cfg: &ModelConfig, seed: u64, per_tensor: usize) -> Vec<GroupReport> {
    let params = jittered_params(cfg, seed);
    let problem = Problem::random(cfg, seed);
    let w = LossWeights::default();
    let (_, grads) = loss_and_grad(
        &params,
        &problem.points,
        &problem.aligned,
        problem.class,
        &problem.affordance,
        &problem.offsets,
        &w,
    )
    .expect("valid problem");
    let analytic: Vec<(String, Vec<f64>)> = grads
        .manifest()
        .iter()
        .map(|t| (t.name.clone(), t.data.to_vec()))
        .collect();
    let mut pick = rng::stream(seed, "gradcheck-pick", 0);
    let mut reports = Vec::with_capacity(analytic.len());
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let idx: Vec<usize> = if g.len() <= per_tensor {
            (0..g.len()).collect()
        } else {
            (0..per_tensor).map(|_| pick.gen_range(0..g.len())).collect()
        };
        let mut worst: f64 = 0.0;
        for &i in &idx {
            let bump = |delta: f64| {
                let mut p = params.clone();
                p.slices_mut()[ti][i] += delta;
                problem.loss(&p, &w)
            };
            let a = g[i];
            let rel = FD_EPSILONS
                .iter()
                .map(|&eps| {
                    let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                    (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(rel);
        }
        reports.push(GroupReport {
            name: name.clone(),
            checked: idx.len(),
            max_relative_error: worst,
        });
    }
    reports
}
