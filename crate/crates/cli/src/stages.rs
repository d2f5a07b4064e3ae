//! Pipeline stages and their on-disk layout.
//!
//! Dataset root: `scenes` (index, items, objects, clouds), `gt` (planner
//! output, affordance maps) and `templates` (split, template database,
//! labels). Checkpoint directory: `train`. Report directory: `eval`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use skt_hang_core::eval::{evaluate, evaluation_objects, text_table, trials_jsonl, TestCase};
use skt_hang_core::labels::{build_template_db, AffordanceMap, TemplateDb};
use skt_hang_core::scenegen::ply::{cloud_with_values, heat_color, to_ply, PlyPoint};
use skt_hang_core::scenegen::{HangObject, PointCloud, SupportItem};
use skt_hang_core::sctdn::{predict_skt, read_checkpoint, write_checkpoint, ModelParams};
use skt_hang_core::training::dataset::{affordance_maps, capture_views, ground_truth, make_samples, split_dataset, GroundTruth, ItemData, ItemKey, Split};
use skt_hang_core::training::{log_csv, train};
use skt_hang_core::{par, SkTrajectory, PIPELINE_VERSION};

use crate::artifacts::{json_bytes, up_to_date, write_file, StageReader, StageWriter};
use crate::config::{PipelineConfig, StageDigests};
use crate::CliError;

pub const SCENES: &str = "scenes";
pub const GT: &str = "gt";
pub const TEMPLATES: &str = "templates";
pub const TRAIN: &str = "train";
pub const EVAL: &str = "eval";

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    GenScenes,
    GenGt,
    BuildTemplates,
    Train,
    /// Single cloud to SKT JSON (and optionally a waypoint PLY).
    Predict {
        cloud: CloudSource,
        checkpoint: Option<PathBuf>,
        out: PathBuf,
        ply: Option<PathBuf>,
    },
    Eval,
    /// Composite PLY: cloud coloured by predicted affordance, predicted and
    /// ground-truth waypoints.
    ExportViz {
        item: String,
        view: usize,
        out: Option<PathBuf>,
    },
    /// Every stage from `gen-scenes` to `eval`.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CloudSource {
    /// A `PointCloud` JSON file.
    File(PathBuf),
    /// A generated view from the dataset.
    Item { id: String, view: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stage: &'static str,
    pub skipped: bool,
    pub summary: String,
}

impl Outcome {
    fn ran(stage: &'static str, summary: String) -> Self {
        Outcome {
            stage,
            skipped: false,
            summary,
        }
    }

    fn skipped(stage: &'static str) -> Self {
        Outcome {
            stage,
            skipped: true,
            summary: "up to date".into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemFile {
    pub key: ItemKey,
    pub item: SupportItem,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GtFile {
    pub item: String,
    pub gt: Option<GroundTruth>,
}

pub fn item_path(id: &str) -> String {
    format!("items/{id}.json")
}

pub fn cloud_path(id: &str, view: usize) -> String {
    format!("clouds/{id}/view{view}.json")
}

pub fn gt_path(id: &str) -> String {
    format!("gt/{id}.json")
}

pub fn affordance_path(id: &str, view: usize) -> String {
    format!("affordance/{id}/view{view}.json")
}

/// Runs `cmd`. Stages already up to date are skipped unless `force` is set.
pub fn run(cmd: &Command, cfg: &PipelineConfig, force: bool) -> Result<Vec<Outcome>, CliError> {
    cfg.validate()?;
    par::init_workers(cfg.workers);
    let d = cfg.digests();
    let one = |o: Result<Outcome, CliError>| o.map(|o| vec![o]);
    match cmd {
        Command::GenScenes => one(gen_scenes(cfg, &d, force)),
        Command::GenGt => one(gen_gt(cfg, &d, force)),
        Command::BuildTemplates => one(build_templates(cfg, &d, force)),
        Command::Train => one(train_stage(cfg, &d, force)),
        Command::Eval => one(eval_stage(cfg, &d, force)),
        Command::Predict {
            cloud,
            checkpoint,
            out,
            ply,
        } => one(predict_stage(cfg, &d, cloud, checkpoint.as_deref(), out, ply.as_deref())),
        Command::ExportViz { item, view, out } => one(export_viz(cfg, &d, item, *view, out.as_deref())),
        Command::All => Ok(vec![
            gen_scenes(cfg, &d, force)?,
            gen_gt(cfg, &d, force)?,
            build_templates(cfg, &d, force)?,
            train_stage(cfg, &d, force)?,
            eval_stage(cfg, &d, force)?,
        ]),
    }
}

fn gen_scenes(cfg: &PipelineConfig, d: &StageDigests, force: bool) -> Result<Outcome, CliError> {
    let root = &cfg.paths.dataset;
    if !force && up_to_date(root, SCENES, &d.scenes) {
        return Ok(Outcome::skipped(SCENES));
    }
    let dc = cfg.dataset_config();
    let keys = ItemKey::all(dc.items_per_tier);
    let generated: Vec<Result<(SupportItem, Vec<PointCloud>), CliError>> = par::map(&keys, |key| {
        let item = key.item(dc.seed);
        let clouds = capture_views(&item, &dc).map_err(CliError::pipeline)?;
        Ok((item, clouds))
    });
    let mut w = StageWriter::begin(root, SCENES, &d.scenes, cfg.seed)?;
    w.write_json("index.json", &keys)?;
    let objects = evaluation_objects(cfg.scenegen.objects, cfg.seed);
    w.write_json("objects.json", &objects)?;
    let mut points = 0;
    for (key, g) in keys.iter().zip(generated) {
        let (item, clouds) = g?;
        let id = key.id();
        for (v, c) in clouds.iter().enumerate() {
            points += c.points.len();
            w.write_json(&cloud_path(&id, v), c)?;
            if cfg.scenegen.export_ply {
                let ply = to_ply(&c.points.iter().map(|p| PlyPoint::plain(*p)).collect::<Vec<_>>());
                w.write_bytes(&format!("clouds/{id}/view{v}.ply"), ply.as_bytes())?;
            }
        }
        w.write_json(&item_path(&id), &ItemFile { key: *key, item })?;
    }
    w.finish()?;
    Ok(Outcome::ran(
        SCENES,
        format!("{} items, {} objects, {} points", keys.len(), objects.len(), points),
    ))
}

fn gen_gt(cfg: &PipelineConfig, d: &StageDigests, force: bool) -> Result<Outcome, CliError> {
    let root = &cfg.paths.dataset;
    if !force && up_to_date(root, GT, &d.gt) {
        return Ok(Outcome::skipped(GT));
    }
    let scenes = StageReader::open(root, SCENES, &d.scenes)?;
    let dc = cfg.dataset_config();
    let keys: Vec<ItemKey> = scenes.read_json("index.json")?;
    let inputs = keys
        .iter()
        .map(|k| load_scene(&scenes, k, dc.views_per_item))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs: Vec<(Option<GroundTruth>, Vec<AffordanceMap>)> = par::map(&inputs, |(file, clouds)| {
        let gt = ground_truth(&file.item, &dc);
        let aff = gt.as_ref().map(|g| affordance_maps(clouds, g, &dc.affordance)).unwrap_or_default();
        (gt, aff)
    });
    let mut w = StageWriter::begin(root, GT, &d.gt, cfg.seed)?;
    let (mut contacts, mut planned, mut total) = (0, 0, 0);
    for ((key, (_, clouds)), (gt, aff)) in keys.iter().zip(&inputs).zip(outputs) {
        let id = key.id();
        if let Some(g) = &gt {
            contacts += 1;
            planned += g.successful().len();
            total += g.skts.len();
        }
        for (v, a) in aff.iter().enumerate() {
            w.write_json(&affordance_path(&id, v), a)?;
            if cfg.scenegen.export_ply {
                w.write_bytes(&format!("affordance/{id}/view{v}.ply"), cloud_with_values(&clouds[v].points, &a.values).as_bytes())?;
            }
        }
        w.write_json(&gt_path(&id), &GtFile { item: id, gt })?;
    }
    w.finish()?;
    Ok(Outcome::ran(
        GT,
        format!("contacts {contacts}/{}, trajectories planned {planned}/{total}", keys.len()),
    ))
}

fn load_scene(scenes: &StageReader, key: &ItemKey, views: usize) -> Result<(ItemFile, Vec<PointCloud>), CliError> {
    let id = key.id();
    let file: ItemFile = scenes.read_json(&item_path(&id))?;
    let clouds = (0..views).map(|v| scenes.read_json(&cloud_path(&id, v))).collect::<Result<Vec<_>, _>>()?;
    Ok((file, clouds))
}

/// Everything stored for one item, read through both manifests.
pub fn load_item(scenes: &StageReader, gt: &StageReader, key: &ItemKey, views: usize) -> Result<ItemData, CliError> {
    let (file, clouds) = load_scene(scenes, key, views)?;
    let id = key.id();
    let g: GtFile = gt.read_json(&gt_path(&id))?;
    let affordance = if g.gt.is_some() {
        (0..views).map(|v| gt.read_json(&affordance_path(&id, v))).collect::<Result<Vec<_>, _>>()?
    } else {
        vec![]
    };
    Ok(ItemData {
        key: *key,
        item: file.item,
        gt: g.gt,
        clouds,
        affordance,
    })
}

fn build_templates(cfg: &PipelineConfig, d: &StageDigests, force: bool) -> Result<Outcome, CliError> {
    let root = &cfg.paths.dataset;
    if !force && up_to_date(root, TEMPLATES, &d.templates) {
        return Ok(Outcome::skipped(TEMPLATES));
    }
    let scenes = StageReader::open(root, SCENES, &d.scenes)?;
    let gts = StageReader::open(root, GT, &d.gt)?;
    let keys: Vec<ItemKey> = scenes.read_json("index.json")?;
    let sp = &cfg.split;
    let split = split_dataset(&keys, (sp.train, sp.val, sp.test), cfg.seed).map_err(CliError::pipeline)?;
    // Only training items are opened here.
    let mut inputs = Vec::new();
    for key in &split.train {
        let g: GtFile = gts.read_json(&gt_path(&key.id()))?;
        match g.gt.as_ref().and_then(|g| g.canonical()) {
            Some(skt) => inputs.push((key.id(), Some(skt.positions()))),
            None => log::warn!("{}: no ground-truth trajectory, left out of the template database", key.id()),
        }
    }
    let built = build_template_db(&inputs, cfg.labels.k, cfg.seed).map_err(CliError::pipeline)?;
    let labels: BTreeMap<String, usize> = inputs.iter().map(|(id, _)| id.clone()).zip(built.labels.iter().copied()).collect();
    let mut w = StageWriter::begin(root, TEMPLATES, &d.templates, cfg.seed)?;
    w.write_json("split.json", &split)?;
    w.write_json("templates.json", &built.db)?;
    w.write_json("labels.json", &labels)?;
    w.finish()?;
    let mut sizes = vec![0usize; cfg.labels.k];
    for l in &built.labels {
        sizes[*l] += 1;
    }
    Ok(Outcome::ran(
        TEMPLATES,
        format!(
            "split {}/{}/{}, {} templates, cluster sizes {:?}",
            split.train.len(),
            split.val.len(),
            split.test.len(),
            cfg.labels.k,
            sizes
        ),
    ))
}

/// Verified readers for the dataset stages plus the split and templates.
pub struct Upstream {
    pub scenes: StageReader,
    pub gt: StageReader,
    pub split: Split,
    pub db: TemplateDb,
}

pub fn open_upstream(cfg: &PipelineConfig, d: &StageDigests) -> Result<Upstream, CliError> {
    let root = &cfg.paths.dataset;
    let scenes = StageReader::open(root, SCENES, &d.scenes)?;
    let gt = StageReader::open(root, GT, &d.gt)?;
    let templates = StageReader::open(root, TEMPLATES, &d.templates)?;
    Ok(Upstream {
        scenes,
        gt,
        split: templates.read_json("split.json")?,
        db: templates.read_json("templates.json")?,
    })
}

fn checkpoint_meta(cfg: &PipelineConfig, d: &StageDigests, which: &str, epoch: usize) -> serde_json::Value {
    serde_json::json!({
        "pipeline_version": PIPELINE_VERSION,
        "config_digest": d.train,
        "seed": cfg.seed,
        "which": which,
        "epoch": epoch,
    })
}

fn train_stage(cfg: &PipelineConfig, d: &StageDigests, force: bool) -> Result<Outcome, CliError> {
    let root = &cfg.paths.checkpoints;
    if !force && up_to_date(root, TRAIN, &d.train) {
        return Ok(Outcome::skipped(TRAIN));
    }
    let up = open_upstream(cfg, d)?;
    let views = cfg.scenegen.views_per_item;
    let load = |keys: &[ItemKey]| -> Result<Vec<ItemData>, CliError> {
        keys.iter().map(|k| load_item(&up.scenes, &up.gt, k, views)).filter(|r| r.as_ref().map_or(true, |d| d.usable())).collect()
    };
    let train_items = load(&up.split.train)?;
    let val_items = load(&up.split.val)?;
    let train_set = make_samples(&train_items.iter().collect::<Vec<_>>(), &up.db);
    let val_set = make_samples(&val_items.iter().collect::<Vec<_>>(), &up.db);
    log::info!("training on {} samples, validating on {}", train_set.len(), val_set.len());
    let out = train(&cfg.model_config(), &train_set, &val_set, &cfg.train_config(), |e| {
        log::info!(
            "epoch {:>3}  l_traj {:.4e}  l_aff {:.4e}  l_cls {:.4}  val_acc {:.3}  val_contact {:.4} m",
            e.epoch,
            e.l_traj,
            e.l_aff,
            e.l_cls,
            e.val_acc,
            e.val_contact_dist_m
        )
    })
    .map_err(CliError::pipeline)?;
    let last_epoch = out.log.last().map_or(0, |e| e.epoch);
    let mut w = StageWriter::begin(root, TRAIN, &d.train, cfg.seed)?;
    w.write_bytes("best.ckpt", &write_checkpoint(&out.best, checkpoint_meta(cfg, d, "best", out.best_epoch)))?;
    w.write_bytes("last.ckpt", &write_checkpoint(&out.last, checkpoint_meta(cfg, d, "last", last_epoch)))?;
    w.write_bytes("train_log.csv", log_csv(&out.log).as_bytes())?;
    w.finish()?;
    Ok(Outcome::ran(
        TRAIN,
        format!("{} epochs, best epoch {}", out.log.len(), out.best_epoch),
    ))
}

/// Loads a checkpoint. Files inside the checkpoint directory are verified
/// against the training manifest; other paths are read as given.
pub fn load_params(cfg: &PipelineConfig, d: &StageDigests, path: &Path) -> Result<ModelParams, CliError> {
    let root = &cfg.paths.checkpoints;
    let bytes = match path.strip_prefix(root).ok().and_then(|r| r.to_str()) {
        Some(rel) => StageReader::open(root, TRAIN, &d.train)?.read_bytes(rel)?,
        None => std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?,
    };
    let (params, _) = read_checkpoint(&bytes).map_err(CliError::pipeline)?;
    if params.config != cfg.model_config() {
        return Err(CliError::StaleArtifact {
            artifact: path.display().to_string(),
            expected: "a checkpoint for the configured model".into(),
            found: "a different model configuration".into(),
        });
    }
    Ok(params)
}

fn test_cases(up: &Upstream, cfg: &PipelineConfig) -> Result<Vec<TestCase>, CliError> {
    let mut cases = Vec::new();
    for key in &up.split.test {
        let data = load_item(&up.scenes, &up.gt, key, cfg.scenegen.views_per_item)?;
        let Some(gt) = data.gt else {
            log::warn!("{}: no reference contact, skipped", key.id());
            continue;
        };
        cases.push(TestCase {
            id: data.item.frame_id(),
            gt_contact: gt.contact.contact_point,
            gt_skt: gt.canonical().cloned(),
            cloud: data.clouds[cfg.eval.view].clone(),
            item: data.item,
        });
    }
    Ok(cases)
}

fn eval_stage(cfg: &PipelineConfig, d: &StageDigests, force: bool) -> Result<Outcome, CliError> {
    let ckpt = cfg.eval_checkpoint()?;
    let root = &cfg.paths.reports;
    if !force && up_to_date(root, EVAL, &d.eval) {
        return Ok(Outcome::skipped(EVAL));
    }
    let up = open_upstream(cfg, d)?;
    let params = load_params(cfg, d, &ckpt)?;
    let objects: Vec<HangObject> = up.scenes.read_json("objects.json")?;
    let cases = test_cases(&up, cfg)?;
    let run = evaluate(&params, &up.db, &cases, &objects, &d.eval).map_err(CliError::pipeline)?;
    let mut w = StageWriter::begin(root, EVAL, &d.eval, cfg.seed)?;
    w.write_json("eval.json", &run.report)?;
    w.write_bytes("eval.txt", text_table(&run.report, None).as_bytes())?;
    w.write_bytes("trials.jsonl", trials_jsonl(&run.trials).as_bytes())?;
    // Wall-clock numbers differ between runs, so they stay out of the manifest.
    w.write_unlisted("timing.json", &json_bytes(&run.timing))?;
    w.finish()?;
    let full = run.report.methods.first().map_or(0.0, |m| m.overall.rate_pct);
    Ok(Outcome::ran(
        EVAL,
        format!(
            "{} trials, full-model success {:.1}%, median inference {:.4} s",
            run.report.trial_count, full, run.timing.median_s
        ),
    ))
}

fn resolve_cloud(cfg: &PipelineConfig, d: &StageDigests, src: &CloudSource) -> Result<(String, PointCloud), CliError> {
    match src {
        CloudSource::File(path) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
            let cloud: PointCloud = serde_json::from_slice(&bytes).map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))?;
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud").to_string();
            Ok((id, cloud))
        }
        CloudSource::Item { id, view } => {
            let scenes = StageReader::open(&cfg.paths.dataset, SCENES, &d.scenes)?;
            let file: ItemFile = scenes.read_json(&item_path(id))?;
            Ok((file.item.frame_id(), scenes.read_json(&cloud_path(id, *view))?))
        }
    }
}

fn predict_stage(
    cfg: &PipelineConfig,
    d: &StageDigests,
    cloud: &CloudSource,
    checkpoint: Option<&Path>,
    out: &Path,
    ply: Option<&Path>,
) -> Result<Outcome, CliError> {
    let ckpt = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => cfg.eval_checkpoint()?,
    };
    let templates = StageReader::open(&cfg.paths.dataset, TEMPLATES, &d.templates)?;
    let db: TemplateDb = templates.read_json("templates.json")?;
    let params = load_params(cfg, d, &ckpt)?;
    let (frame, pc) = resolve_cloud(cfg, d, cloud)?;
    let pred = predict_skt(&params, &pc.points, &db, &frame).map_err(CliError::pipeline)?;
    let json = pred.skt.to_json().map_err(CliError::pipeline)?;
    write_file(out, json.as_bytes())?;
    if let Some(p) = ply {
        write_file(p, to_ply(&waypoint_points(&pred.skt, [0, 200, 0])).as_bytes())?;
    }
    Ok(Outcome::ran(
        "predict",
        format!(
            "class {}, contact ({:.4}, {:.4}, {:.4}) -> {}",
            pred.class,
            pred.contact.x,
            pred.contact.y,
            pred.contact.z,
            out.display()
        ),
    ))
}

/// Waypoints plus evenly spaced points along each segment.
fn waypoint_points(skt: &SkTrajectory, color: [u8; 3]) -> Vec<PlyPoint> {
    let pos = skt.positions();
    let mut out = Vec::new();
    for (i, p) in pos.iter().enumerate() {
        out.push(PlyPoint {
            position: *p,
            value: None,
            color: Some(color),
        });
        if let Some(q) = pos.get(i + 1) {
            for s in 1..8 {
                let u = s as f64 / 8.0;
                out.push(PlyPoint {
                    position: p + (q - p) * u,
                    value: None,
                    color: Some(color.map(|c| c / 2)),
                });
            }
        }
    }
    out
}

fn export_viz(cfg: &PipelineConfig, d: &StageDigests, id: &str, view: usize, out: Option<&Path>) -> Result<Outcome, CliError> {
    if view >= cfg.scenegen.views_per_item {
        return Err(CliError::ConfigInvalid {
            field: "view".into(),
            reason: format!("must be below {}", cfg.scenegen.views_per_item),
        });
    }
    let up = open_upstream(cfg, d)?;
    let params = load_params(cfg, d, &cfg.eval_checkpoint()?)?;
    let key = up
        .split
        .train
        .iter()
        .chain(&up.split.val)
        .chain(&up.split.test)
        .find(|k| k.id() == id)
        .ok_or_else(|| CliError::MissingArtifact(format!("item {id} is not in the dataset")))?;
    let data = load_item(&up.scenes, &up.gt, key, cfg.scenegen.views_per_item)?;
    let cloud = &data.clouds[view];
    let pred = predict_skt(&params, &cloud.points, &up.db, &data.item.frame_id()).map_err(CliError::pipeline)?;
    let mut pts: Vec<PlyPoint> = cloud
        .points
        .iter()
        .zip(&pred.affordance)
        .map(|(p, a)| PlyPoint {
            position: *p,
            value: None,
            color: Some(heat_color(*a)),
        })
        .collect();
    pts.extend(waypoint_points(&pred.skt, [0, 220, 0]));
    if let Some(gt) = data.gt.as_ref().and_then(|g| g.canonical()) {
        pts.extend(waypoint_points(gt, [255, 255, 255]));
    }
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.reports.join(format!("viz/{id}-view{view}.ply")));
    write_file(&target, to_ply(&pts).as_bytes())?;
    Ok(Outcome::ran("export-viz", format!("wrote {}", target.display())))
}
