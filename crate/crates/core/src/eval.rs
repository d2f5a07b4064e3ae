//! Evaluation harness: success rates by difficulty and object category,
//! the template-only ablations, ground-truth calibration and inference
//! timing.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::labels::TemplateDb;
use crate::scenegen::{generate_object, Category, Difficulty, HangObject, PointCloud, SupportItem};
use crate::sctdn::{predict_skt, predict_with, ModelParams, PredictOptions, SctdnError};
use crate::simcheck::{execute_and_judge, FailureMode};
use crate::{par, rng, SkTrajectory, Vec3};

/// One reference object followed by `count - 1` others, cycling through the
/// non-reference categories.
pub fn evaluation_objects(count: usize, seed: u64) -> Vec<HangObject> {
    let mut out = vec![generate_object(0, Category::Reference)];
    for i in 0..count.saturating_sub(1) {
        let cat = Category::NON_REFERENCE[i % Category::NON_REFERENCE.len()];
        out.push(generate_object(rng::derive_seed(seed, "eval-object", i as u64), cat));
    }
    out
}

/// A held-out item with the cloud it is evaluated from.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub id: String,
    pub item: SupportItem,
    pub cloud: PointCloud,
    pub gt_contact: Vec3,
    pub gt_skt: Option<SkTrajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Full network: template, predicted contact, deformation.
    Full,
    /// Retrieved template aligned to the predicted contact, no offsets.
    TemplateOnly,
    /// Retrieved template aligned to the ground-truth contact, no offsets.
    TemplateOnlyGtContact,
    /// The item's own planned trajectory (upper-bound calibration).
    GroundTruth,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Full,
        Method::TemplateOnly,
        Method::TemplateOnlyGtContact,
        Method::GroundTruth,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Full => "SCTDN (full)",
            Method::TemplateOnly => "Template + contact point",
            Method::TemplateOnlyGtContact => "Template + GT contact point",
            Method::GroundTruth => "Ground-truth SKT",
        }
    }
}

/// One line of the trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub item_id: String,
    pub difficulty: Difficulty,
    pub object_id: String,
    pub category: Category,
    pub method: Method,
    pub success: bool,
    pub failure_mode: FailureMode,
    pub max_penetration: f64,
}

/// Per-case network outputs shared by every object.
#[derive(Debug, Clone)]
pub struct CasePrediction {
    pub full: SkTrajectory,
    pub template_only: SkTrajectory,
    pub template_gt_contact: SkTrajectory,
    pub class: usize,
    pub contact: Vec3,
    pub contact_error_m: f64,
    pub seconds: f64,
}

/// Runs inference once per case. Only the `predict_skt` call is timed.
pub fn predict_cases(params: &ModelParams, db: &TemplateDb, cases: &[TestCase]) -> Result<Vec<CasePrediction>, SctdnError> {
    cases
        .iter()
        .map(|c| {
            let start = Instant::now();
            let full = predict_skt(params, &c.cloud.points, db, &c.id)?;
            let seconds = start.elapsed().as_secs_f64();
            let ablate = |contact: Option<Vec3>| {
                predict_with(
                    params,
                    &c.cloud.points,
                    db,
                    &c.id,
                    PredictOptions {
                        zero_offsets: true,
                        contact,
                        class: None,
                    },
                )
            };
            let template_only = ablate(None)?.skt;
            let template_gt_contact = ablate(Some(c.gt_contact))?.skt;
            Ok(CasePrediction {
                contact_error_m: (full.contact - c.gt_contact).norm(),
                class: full.class,
                contact: full.contact,
                full: full.skt,
                template_only,
                template_gt_contact,
                seconds,
            })
        })
        .collect()
}

fn trajectory_for<'a>(method: Method, case: &'a TestCase, pred: &'a CasePrediction) -> Option<&'a SkTrajectory> {
    match method {
        Method::Full => Some(&pred.full),
        Method::TemplateOnly => Some(&pred.template_only),
        Method::TemplateOnlyGtContact => Some(&pred.template_gt_contact),
        Method::GroundTruth => case.gt_skt.as_ref(),
    }
}

/// Executes every (method, case, object) triple. The same trajectory is
/// used for every object of a case.
pub fn run_trials(cases: &[TestCase], preds: &[CasePrediction], objects: &[HangObject], methods: &[Method]) -> Vec<Trial> {
    let mut jobs = Vec::new();
    for &m in methods {
        for (ci, case) in cases.iter().enumerate() {
            if trajectory_for(m, case, &preds[ci]).is_none() {
                continue;
            }
            for oi in 0..objects.len() {
                jobs.push((m, ci, oi));
            }
        }
    }
    par::map(&jobs, |&(m, ci, oi)| {
        let case = &cases[ci];
        let object = &objects[oi];
        let skt = trajectory_for(m, case, &preds[ci]).expect("filtered above");
        let outcome = execute_and_judge(skt, object, &case.item).expect("augmented trajectory");
        Trial {
            item_id: case.id.clone(),
            difficulty: case.item.difficulty,
            object_id: object.id(),
            category: object.category,
            method: m,
            success: outcome.success,
            failure_mode: outcome.failure_mode,
            max_penetration: outcome.max_penetration,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub label: String,
    pub trials: usize,
    pub successes: usize,
    pub rate_pct: f64,
}

impl RateRow {
    fn of<'a>(label: &str, trials: impl Iterator<Item = &'a Trial>) -> Self {
        let (mut n, mut s) = (0, 0);
        for t in trials {
            n += 1;
            s += usize::from(t.success);
        }
        RateRow {
            label: label.to_string(),
            trials: n,
            successes: s,
            rate_pct: if n == 0 { 0.0 } else { 100.0 * s as f64 / n as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub label: String,
    pub by_difficulty: Vec<RateRow>,
    pub by_category: Vec<RateRow>,
    pub overall: RateRow,
}

/// Aggregates one method's trials. Counts only, so trial order is irrelevant.
pub fn aggregate(method: Method, trials: &[Trial]) -> MethodReport {
    let mine: Vec<&Trial> = trials.iter().filter(|t| t.method == method).collect();
    MethodReport {
        method,
        label: method.label().to_string(),
        by_difficulty: Difficulty::ALL
            .iter()
            .map(|d| RateRow::of(d.label(), mine.iter().copied().filter(|t| t.difficulty == *d)))
            .collect(),
        by_category: Category::ALL
            .iter()
            .map(|c| RateRow::of(c.label(), mine.iter().copied().filter(|t| t.category == *c)))
            .filter(|r| r.trials > 0)
            .collect(),
        overall: RateRow::of("Overall", mine.iter().copied()),
    }
}

/// Reference object against the mean of the other categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossObject {
    pub reference_pct: f64,
    pub non_reference_mean_pct: f64,
    pub gap_pct: f64,
    pub categories: Vec<RateRow>,
}

pub fn cross_object_report(report: &MethodReport) -> CrossObject {
    let reference = report
        .by_category
        .iter()
        .find(|r| r.label == Category::Reference.label())
        .map_or(0.0, |r| r.rate_pct);
    let others: Vec<f64> = report
        .by_category
        .iter()
        .filter(|r| r.label != Category::Reference.label())
        .map(|r| r.rate_pct)
        .collect();
    let mean = if others.is_empty() {
        0.0
    } else {
        others.iter().sum::<f64>() / others.len() as f64
    };
    CrossObject {
        reference_pct: reference,
        non_reference_mean_pct: mean,
        gap_pct: reference - mean,
        categories: report.by_category.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactStats {
    pub clouds: usize,
    pub within_1cm_pct: f64,
    pub mean_error_m: f64,
}

/// Deterministic part of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub items: usize,
    pub objects: usize,
    /// Trials of the full method; equals items × objects.
    pub trial_count: usize,
    pub methods: Vec<MethodReport>,
    pub cross_object: CrossObject,
    pub contact: ContactStats,
}

impl EvalReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Wall-clock inference statistics, kept apart from the report so the
/// report stays byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub clouds: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub max_s: f64,
}

pub fn timing(seconds: &[f64]) -> Timing {
    let mut s = seconds.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    };
    Timing {
        clouds: n,
        mean_s: if n == 0 { 0.0 } else { s.iter().sum::<f64>() / n as f64 },
        median_s: median,
        max_s: s.last().copied().unwrap_or(0.0),
    }
}

pub fn build_report(
    config_digest: &str,
    cases: &[TestCase],
    preds: &[CasePrediction],
    objects: &[HangObject],
    trials: &[Trial],
) -> EvalReport {
    let methods: Vec<MethodReport> = Method::ALL
        .iter()
        .filter(|m| trials.iter().any(|t| t.method == **m))
        .map(|&m| aggregate(m, trials))
        .collect();
    let full = aggregate(Method::Full, trials);
    let n = preds.len();
    EvalReport {
        config_digest: config_digest.to_string(),
        items: cases.len(),
        objects: objects.len(),
        trial_count: full.overall.trials,
        cross_object: cross_object_report(&full),
        methods,
        contact: ContactStats {
            clouds: n,
            within_1cm_pct: if n == 0 {
                0.0
            } else {
                100.0 * preds.iter().filter(|p| p.contact_error_m <= 0.01).count() as f64 / n as f64
            },
            mean_error_m: if n == 0 {
                0.0
            } else {
                preds.iter().map(|p| p.contact_error_m).sum::<f64>() / n as f64
            },
        },
    }
}

pub struct EvalRun {
    pub report: EvalReport,
    pub trials: Vec<Trial>,
    pub predictions: Vec<CasePrediction>,
    pub timing: Timing,
}

/// Full protocol: one prediction per case, every method on every object.
pub fn evaluate(
    params: &ModelParams,
    db: &TemplateDb,
    cases: &[TestCase],
    objects: &[HangObject],
    config_digest: &str,
) -> Result<EvalRun, SctdnError> {
    let predictions = predict_cases(params, db, cases)?;
    let trials = run_trials(cases, &predictions, objects, &Method::ALL);
    let report = build_report(config_digest, cases, &predictions, objects, &trials);
    let seconds: Vec<f64> = predictions.iter().map(|p| p.seconds).collect();
    Ok(EvalRun {
        report,
        timing: timing(&seconds),
        trials,
        predictions,
    })
}

pub fn trials_jsonl(trials: &[Trial]) -> String {
    let mut s = String::new();
    for t in trials {
        s.push_str(&serde_json::to_string(t).expect("trial serialises"));
        s.push('\n');
    }
    s
}

pub fn parse_trials_jsonl(text: &str) -> serde_json::Result<Vec<Trial>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Plain-text tables: success by difficulty per method, then by object
/// category for the full method.
pub fn text_table(report: &EvalReport, timing: Option<&Timing>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Success rate by difficulty (%)");
    let _ = write!(s, "{:<30}", "Method");
    for d in Difficulty::ALL {
        let _ = write!(s, "{:>10}", d.label());
    }
    let _ = writeln!(s, "{:>10}", "Overall");
    for m in &report.methods {
        let _ = write!(s, "{:<30}", m.label);
        for r in &m.by_difficulty {
            let _ = write!(s, "{:>10.1}", r.rate_pct);
        }
        let _ = writeln!(s, "{:>10.1}", m.overall.rate_pct);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Success rate by object category, full method (%)");
    for r in &report.cross_object.categories {
        let _ = writeln!(s, "{:<30}{:>10.1}{:>8} trials", r.label, r.rate_pct, r.trials);
    }
    let _ = writeln!(
        s,
        "{:<30}{:>10.1}",
        "Reference minus others", report.cross_object.gap_pct
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Contact within 1 cm: {:.1}% of {} clouds (mean error {:.4} m)",
        report.contact.within_1cm_pct, report.contact.clouds, report.contact.mean_error_m
    );
    if let Some(t) = timing {
        let _ = writeln!(
            s,
            "Inference time: median {:.4} s, mean {:.4} s over {} clouds",
            t.median_s, t.mean_s, t.clouds
        );
    }
    s
}
