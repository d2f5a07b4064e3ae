//! The single pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use skt_hang_core::labels::AffordanceParams;
use skt_hang_core::sctdn::model::MIN_POINTS;
use skt_hang_core::sctdn::{LossWeights, ModelConfig};
use skt_hang_core::training::{DatasetConfig, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    pub paths: Paths,
    pub scenegen: ScenegenSection,
    pub planner: PlannerSection,
    pub labels: LabelsSection,
    #[serde(default)]
    pub split: SplitSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenegenSection {
    pub items_per_tier: usize,
    pub views_per_item: usize,
    pub n_points: usize,
    /// Evaluation objects: one reference plus `objects - 1` others.
    #[serde(default = "default_objects")]
    pub objects: usize,
    #[serde(default)]
    pub jitter_sigma: f64,
    #[serde(default)]
    pub export_ply: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub skts_per_item: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsSection {
    pub k: usize,
    #[serde(default = "half")]
    pub alpha: f64,
    #[serde(default = "half")]
    pub beta: f64,
    #[serde(default = "default_sigma_sq")]
    pub sigma_sq: f64,
    #[serde(default = "default_gate")]
    pub gate: f64,
}

fn default_objects() -> usize {
    10
}

fn half() -> f64 {
    0.5
}

fn default_sigma_sq() -> f64 {
    AffordanceParams::default().sigma_sq
}

fn default_gate() -> f64 {
    AffordanceParams::default().gate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 0.75,
            val: 0.125,
            test: 0.125,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    #[serde(default)]
    pub separate_encoders: bool,
    /// Optional restatements of N, T and K; they must match the owning sections.
    pub n_points: Option<usize>,
    pub t: Option<usize>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop: usize,
    pub cosine: bool,
    pub loss_weights: [f64; 3],
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            batch_size: d.batch_size,
            epochs: d.epochs,
            early_stop: d.early_stop,
            cosine: d.cosine,
            loss_weights: [d.weights.traj, d.weights.aff, d.weights.cls],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Checkpoint evaluated by `eval`; relative to the checkpoint directory.
    pub checkpoint: Option<PathBuf>,
    /// Cloud index used for each test item.
    pub view: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            checkpoint: None,
            view: 0,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::ConfigInvalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid("(file)", e.to_string()))
    }

    /// Reads and validates `path`, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("(file)", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.dataset, &mut cfg.paths.checkpoints, &mut cfg.paths.reports] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.scenegen;
        if s.items_per_tier == 0 {
            return Err(invalid("scenegen.items_per_tier", "must be positive"));
        }
        if s.views_per_item == 0 {
            return Err(invalid("scenegen.views_per_item", "must be positive"));
        }
        if s.n_points < MIN_POINTS {
            return Err(invalid("scenegen.n_points", format!("must be at least {MIN_POINTS}")));
        }
        if !(s.jitter_sigma >= 0.0) {
            return Err(invalid("scenegen.jitter_sigma", "must be non-negative"));
        }
        if self.planner.skts_per_item == 0 {
            return Err(invalid("planner.skts_per_item", "must be positive"));
        }
        if self.planner.t < 2 {
            return Err(invalid("planner.t", "must be at least 2"));
        }
        let l = &self.labels;
        if l.k == 0 {
            return Err(invalid("labels.k", "must be positive"));
        }
        if !(l.sigma_sq > 0.0) {
            return Err(invalid("labels.sigma_sq", "must be positive"));
        }
        let sp = &self.split;
        if [sp.train, sp.val, sp.test].iter().any(|f| *f < 0.0) || (sp.train + sp.val + sp.test - 1.0).abs() > 1e-9 {
            return Err(invalid("split", "fractions must be non-negative and sum to 1"));
        }
        for (name, given, owner) in [
            ("model.n_points", self.model.n_points, s.n_points),
            ("model.t", self.model.t, self.planner.t),
            ("model.k", self.model.k, l.k),
        ] {
            if let Some(g) = given {
                if g != owner {
                    return Err(invalid(name, format!("{g} disagrees with the owning section ({owner})")));
                }
            }
        }
        self.model_config().validate().map_err(|e| invalid("model", e))?;
        self.train_config().validate().map_err(|e| invalid("train", e.to_string()))?;
        if s.objects == 0 {
            return Err(invalid("scenegen.objects", "must be positive"));
        }
        if self.eval.view >= s.views_per_item {
            return Err(invalid("eval.view", "must be below scenegen.views_per_item"));
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            items_per_tier: self.scenegen.items_per_tier,
            views_per_item: self.scenegen.views_per_item,
            skts_per_item: self.planner.skts_per_item,
            t: self.planner.t,
            n_points: self.scenegen.n_points,
            jitter_sigma: self.scenegen.jitter_sigma,
            affordance: AffordanceParams {
                sigma_sq: self.labels.sigma_sq,
                alpha: self.labels.alpha,
                beta: self.labels.beta,
                gate: self.labels.gate,
            },
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = match self.model.preset {
            Preset::Full => ModelConfig::full(),
            Preset::Desk => ModelConfig::desk(),
            Preset::Tiny => ModelConfig::tiny(),
        };
        m.n_points = self.scenegen.n_points;
        m.t = self.planner.t;
        m.k = self.labels.k;
        m.separate_encoders = self.model.separate_encoders;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            epochs: t.epochs,
            weights: LossWeights {
                traj: t.loss_weights[0],
                aff: t.loss_weights[1],
                cls: t.loss_weights[2],
            },
            early_stop: t.early_stop,
            cosine: t.cosine,
            seed: self.seed,
        }
    }

    /// Path of the checkpoint `eval` reads.
    pub fn eval_checkpoint(&self) -> Result<PathBuf, CliError> {
        let p = self
            .eval
            .checkpoint
            .as_ref()
            .ok_or_else(|| invalid("eval.checkpoint", "required by eval and export-viz"))?;
        Ok(if p.is_relative() { self.paths.checkpoints.join(p) } else { p.clone() })
    }
}

/// SHA-256 of the canonical JSON of `value`, hex encoded.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialises");
    hex::encode(Sha256::digest(bytes))
}

/// Digests chained stage by stage, so a change to one section makes every
/// downstream artifact stale and leaves upstream ones valid.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDigests {
    pub scenes: String,
    pub gt: String,
    pub templates: String,
    pub train: String,
    pub eval: String,
}

impl PipelineConfig {
    pub fn digests(&self) -> StageDigests {
        let scenes = digest_json(&(
            "scenes",
            skt_hang_core::PIPELINE_VERSION,
            self.seed,
            &self.scenegen.items_per_tier,
            &self.scenegen.views_per_item,
            &self.scenegen.n_points,
            &self.scenegen.objects,
            self.scenegen.jitter_sigma,
        ));
        let gt = digest_json(&("gt", &scenes, &self.planner, &self.labels.alpha, &self.labels.beta, self.labels.sigma_sq, self.labels.gate));
        let templates = digest_json(&("templates", &gt, &self.split, self.labels.k));
        let train = digest_json(&("train", &templates, &self.model, &self.train));
        let eval = digest_json(&("eval", &train, &self.eval));
        StageDigests {
            scenes,
            gt,
            templates,
            train,
            eval,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = include_str!("../../../configs/smoke.toml");
    const DESK: &str = include_str!("../../../configs/desk.toml");

    #[test]
    fn shipped_configs_validate() {
        for text in [SMOKE, DESK] {
            let c = PipelineConfig::from_toml(text).unwrap();
            c.validate().unwrap();
        }
    }

    #[test]
    fn inconsistent_dimensions_are_rejected() {
        let mut c = PipelineConfig::from_toml(SMOKE).unwrap();
        c.model.t = Some(c.planner.t + 1);
        match c.validate() {
            Err(CliError::ConfigInvalid { field, .. }) => assert_eq!(field, "model.t"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_checkpoint_names_the_field() {
        let mut c = PipelineConfig::from_toml(SMOKE).unwrap();
        c.eval.checkpoint = None;
        match c.eval_checkpoint() {
            Err(CliError::ConfigInvalid { field, .. }) => assert_eq!(field, "eval.checkpoint"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn digests_chain_downstream_only() {
        let a = PipelineConfig::from_toml(SMOKE).unwrap();
        let mut b = a.clone();
        b.train.epochs += 1;
        let (da, db) = (a.digests(), b.digests());
        assert_eq!(da.scenes, db.scenes);
        assert_eq!(da.templates, db.templates);
        assert_ne!(da.train, db.train);
        assert_ne!(da.eval, db.eval);
        let mut c = a.clone();
        c.seed += 1;
        assert_ne!(a.digests().scenes, c.digests().scenes);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{SMOKE}\n[extra]\nx = 1\n");
        assert!(matches!(PipelineConfig::from_toml(&text), Err(CliError::ConfigInvalid { .. })));
    }
}
