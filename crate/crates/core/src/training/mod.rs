//! Optimisation loop: Adam over summed per-sample gradients, per-epoch
//! validation, best-validation parameter retention and early stopping.

pub mod dataset;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sctdn::model::{argmax, forward, loss_and_grad, loss_total, perceive};
use crate::sctdn::{LossTerms, LossWeights, ModelConfig, ModelParams, SctdnError};
use crate::{par, rng};

pub use dataset::{make_samples, split_dataset, DatasetConfig, ItemData, ItemKey, Sample, Split};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need more items to split ({0} in a tier)")]
    TooFewItems(usize),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] SctdnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    /// Stop after this many epochs without a better validation loss.
    pub early_stop: usize,
    /// Cosine decay of the learning rate to zero over `epochs`.
    pub cosine: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 60,
            weights: LossWeights::default(),
            early_stop: 15,
            cosine: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine && self.epochs > 0 {
            0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * epoch as f64 / self.epochs as f64).cos())
        } else {
            self.learning_rate
        }
    }
}

/// First and second moments plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

fn shapes(p: &ModelParams) -> Vec<Vec<usize>> {
    p.manifest().into_iter().map(|t| t.shape).collect()
}

/// One bias-corrected Adam update with `cfg.learning_rate`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if shapes(params) != shapes(grads) || shapes(params) != shapes(&state.m) {
        return Err(TrainError::ShapeMismatch("parameters, gradients and state differ".into()));
    }
    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let g: Vec<&[f64]> = grads.manifest().into_iter().map(|t| t.data).collect();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in params.slices_mut().into_iter().zip(g).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_traj: f64,
    pub l_aff: f64,
    pub l_cls: f64,
    pub l_total: f64,
    pub val_acc: f64,
    pub val_contact_dist_m: f64,
    pub val_offset_mse: f64,
    pub val_loss: f64,
    pub val_selection: f64,
}

pub const LOG_HEADER: &str = "epoch,l_traj,l_aff,l_cls,val_acc,val_contact_dist_m,val_offset_mse";

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.9e},{:.9e},{:.9e},{:.6},{:.6},{:.9e}",
            r.epoch, r.l_traj, r.l_aff, r.l_cls, r.val_acc, r.val_contact_dist_m, r.val_offset_mse
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValMetrics {
    pub acc: f64,
    pub contact_dist_m: f64,
    pub offset_mse: f64,
    pub loss: f64,
    /// Teacher-forced loss without the classification term; used for model
    /// selection because validation cross-entropy rises long before the
    /// trajectory and affordance terms stop improving.
    pub selection: f64,
}

/// Classification accuracy and contact distance from free-running
/// perception; offset error and loss under teacher forcing.
pub fn validate(params: &ModelParams, samples: &[Sample], w: &LossWeights) -> Result<ValMetrics, TrainError> {
    if samples.is_empty() {
        return Ok(ValMetrics::default());
    }
    let rows = par::map(samples, |s| -> Result<(f64, f64, f64, f64, f64), SctdnError> {
        let p = perceive(params, &s.points)?;
        let hit = f64::from(u8::from(p.class() == s.class));
        let c = argmax(p.affordance.as_slice().expect("contiguous"));
        let dist = (s.points[c] - s.points[s.contact_index]).norm() * s.scale;
        let tr = forward(params, &s.points, &s.aligned, Some(&s.affordance))?;
        let (terms, _) = loss_total(&tr, s.class, &s.affordance, &s.offsets, w)?;
        Ok((hit, dist, terms.traj, terms.total, terms.total - w.cls * terms.cls))
    });
    let n = samples.len() as f64;
    let mut m = ValMetrics::default();
    for r in rows {
        let (hit, dist, mse, loss, sel) = r?;
        m.acc += hit / n;
        m.contact_dist_m += dist / n;
        m.offset_mse += mse / n;
        m.loss += loss / n;
        m.selection += sel / n;
    }
    Ok(m)
}

/// Sum of per-sample gradients (in index order) divided by the batch size.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[&Sample],
    w: &LossWeights,
) -> Result<(LossTerms, ModelParams), SctdnError> {
    let results = par::map(batch, |s| loss_and_grad(params, &s.points, &s.aligned, s.class, &s.affordance, &s.offsets, w));
    let mut total = params.zeros_like();
    let mut terms = LossTerms::default();
    let inv = 1.0 / batch.len() as f64;
    for r in results {
        let (t, g) = r?;
        total.axpy(1.0, &g);
        terms.total += t.total * inv;
        terms.traj += t.traj * inv;
        terms.aff += t.aff * inv;
        terms.cls += t.cls * inv;
    }
    total.scale(inv);
    Ok((terms, total))
}

pub struct TrainOutput {
    /// Parameters with the lowest validation selection score (the last epoch
    /// when there is no validation set).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Trains from `ModelParams::init(model, cfg.seed)`.
pub fn train(
    model: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    model.validate().map_err(TrainError::Config)?;
    if train_set.is_empty() {
        return Err(TrainError::Data("empty training set".into()));
    }
    let mut params = ModelParams::init(model, cfg.seed);
    let mut state = AdamState::new(&params);
    let mut best = (params.clone(), 0usize, f64::INFINITY);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, "epoch-order", epoch as u64));
        let step_cfg = TrainConfig {
            learning_rate: cfg.lr_at(epoch),
            ..cfg.clone()
        };
        let mut sums = LossTerms::default();
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (terms, grads) = batch_gradient(&params, &batch, &cfg.weights)?;
            if !terms.total.is_finite() || !grads.all_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
            }
            let f = batch.len() as f64 / train_set.len() as f64;
            sums.total += terms.total * f;
            sums.traj += terms.traj * f;
            sums.aff += terms.aff * f;
            sums.cls += terms.cls * f;
            adam_step(&mut params, &grads, &mut state, &step_cfg)?;
        }
        let val = validate(&params, val_set, &cfg.weights)?;
        let row = EpochLog {
            epoch,
            l_traj: sums.traj,
            l_aff: sums.aff,
            l_cls: sums.cls,
            l_total: sums.total,
            val_acc: val.acc,
            val_contact_dist_m: val.contact_dist_m,
            val_offset_mse: val.offset_mse,
            val_loss: val.loss,
            val_selection: val.selection,
        };
        on_epoch(&row);
        log.push(row);
        let score = if val_set.is_empty() { -(epoch as f64) } else { val.selection };
        if score < best.2 {
            best = (params.clone(), epoch, score);
        } else if epoch - best.1 >= cfg.early_stop {
            break;
        }
    }
    Ok(TrainOutput {
        best: best.0,
        best_epoch: best.1,
        last: params,
        log,
    })
}
