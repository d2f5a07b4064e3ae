//! Dataset assembly: items, ground truth, clouds, labels and training samples.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::labels::{affordance_gt, AffordanceMap, AffordanceParams, TemplateDb};
use crate::planner::plan_gt;
use crate::scenegen::{camera_views, capture_partial_cloud, generate_item, generate_object, Category, Difficulty, PointCloud, SupportItem};
use crate::sctdn::{align_template, Normalizer};
use crate::simcheck::{find_contact, Contact};
use crate::{par, rng, SkTrajectory, Vec3};

use super::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub items_per_tier: usize,
    pub views_per_item: usize,
    pub skts_per_item: usize,
    pub t: usize,
    pub n_points: usize,
    pub jitter_sigma: f64,
    pub affordance: AffordanceParams,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn desk() -> Self {
        DatasetConfig {
            items_per_tier: 40,
            views_per_item: 6,
            skts_per_item: 5,
            t: 20,
            n_points: 1000,
            jitter_sigma: 0.0,
            affordance: AffordanceParams::default(),
            seed: 0,
        }
    }

    pub fn smoke() -> Self {
        DatasetConfig {
            items_per_tier: 2,
            views_per_item: 2,
            skts_per_item: 2,
            t: 10,
            n_points: 256,
            ..Self::desk()
        }
    }
}

/// Identifies one generated item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemKey {
    pub difficulty: Difficulty,
    pub index: usize,
}

impl ItemKey {
    pub fn all(items_per_tier: usize) -> Vec<ItemKey> {
        Difficulty::ALL
            .iter()
            .flat_map(|&difficulty| (0..items_per_tier).map(move |index| ItemKey { difficulty, index }))
            .collect()
    }

    pub fn id(&self) -> String {
        format!("{}-{:03}", self.difficulty.label().to_lowercase().replace(' ', ""), self.index)
    }

    pub fn item(&self, seed: u64) -> SupportItem {
        let s = rng::derive_seed(seed, "item", self.difficulty as u64 * 1_000_000 + self.index as u64);
        generate_item(s, self.difficulty)
    }
}

/// Planner output for one item with the reference object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub contact: Contact,
    /// One entry per planner seed; `None` where planning failed.
    pub skts: Vec<Option<SkTrajectory>>,
}

impl GroundTruth {
    pub fn successful(&self) -> Vec<&SkTrajectory> {
        self.skts.iter().flatten().collect()
    }

    /// Trajectory used for clustering and affordance labels: the first
    /// seed that planned.
    pub fn canonical(&self) -> Option<&SkTrajectory> {
        self.skts.iter().flatten().next()
    }
}

pub fn reference_object() -> crate::scenegen::HangObject {
    generate_object(0, Category::Reference)
}

/// Contact search and `skts_per_item` planner runs.
pub fn ground_truth(item: &SupportItem, cfg: &DatasetConfig) -> Option<GroundTruth> {
    let object = reference_object();
    let contact = find_contact(item, &object).ok()?;
    let skts = (0..cfg.skts_per_item)
        .map(|s| {
            let seed = rng::derive_seed(cfg.seed, &format!("gt-{}", item.frame_id()), s as u64);
            plan_gt(item, &object, &contact.settled_pose, cfg.t, seed).ok().map(|p| p.skt)
        })
        .collect();
    Some(GroundTruth { contact, skts })
}

pub fn capture_views(item: &SupportItem, cfg: &DatasetConfig) -> Result<Vec<PointCloud>, TrainError> {
    camera_views(item, cfg.views_per_item, cfg.seed)
        .iter()
        .map(|v| {
            capture_partial_cloud(item, v, cfg.n_points, cfg.jitter_sigma, cfg.seed)
                .map_err(|e| TrainError::Data(format!("{}: {e}", item.frame_id())))
        })
        .collect()
}

pub fn affordance_maps(clouds: &[PointCloud], gt: &GroundTruth, params: &AffordanceParams) -> Vec<AffordanceMap> {
    let waypoints = gt.canonical().map(|s| s.positions()).unwrap_or_default();
    clouds
        .iter()
        .map(|c| affordance_gt(&c.points, &gt.contact.contact_point, &waypoints, params))
        .collect()
}

/// Everything generated for one item.
#[derive(Debug, Clone)]
pub struct ItemData {
    pub key: ItemKey,
    pub item: SupportItem,
    pub gt: Option<GroundTruth>,
    pub clouds: Vec<PointCloud>,
    pub affordance: Vec<AffordanceMap>,
}

impl ItemData {
    pub fn id(&self) -> String {
        self.key.id()
    }

    pub fn usable(&self) -> bool {
        self.gt.as_ref().is_some_and(|g| g.canonical().is_some())
    }
}

/// Generates items, ground truth, clouds and affordance maps in parallel.
pub fn generate(cfg: &DatasetConfig) -> Result<Vec<ItemData>, TrainError> {
    let keys = ItemKey::all(cfg.items_per_tier);
    par::map(&keys, |key| {
        let item = key.item(cfg.seed);
        let gt = ground_truth(&item, cfg);
        let clouds = capture_views(&item, cfg)?;
        let affordance = gt.as_ref().map(|g| affordance_maps(&clouds, g, &cfg.affordance)).unwrap_or_default();
        Ok(ItemData {
            key: *key,
            item,
            gt,
            clouds,
            affordance,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<ItemKey>,
    pub val: Vec<ItemKey>,
    pub test: Vec<ItemKey>,
}

/// Per-tier split by item. Each tier is shuffled with its own stream and cut
/// by the fractions, so every split holds the same share of each tier.
pub fn split_dataset(keys: &[ItemKey], fractions: (f64, f64, f64), seed: u64) -> Result<Split, TrainError> {
    let (a, b, c) = fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!("split fractions {a}, {b}, {c} must be non-negative and sum to 1")));
    }
    let mut split = Split {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for tier in Difficulty::ALL {
        let mut group: Vec<ItemKey> = keys.iter().copied().filter(|k| k.difficulty == tier).collect();
        if group.is_empty() {
            continue;
        }
        group.sort_by_key(|k| k.index);
        group.shuffle(&mut rng::stream(seed, "split", tier as u64));
        let n = group.len();
        let n_val = (b * n as f64).round() as usize;
        let n_test = (c * n as f64).round() as usize;
        if n_val + n_test >= n && a > 0.0 {
            return Err(TrainError::TooFewItems(n));
        }
        let n_train = n - n_val - n_test;
        split.train.extend_from_slice(&group[..n_train]);
        split.val.extend_from_slice(&group[n_train..n_train + n_val]);
        split.test.extend_from_slice(&group[n_train + n_val..]);
    }
    Ok(split)
}

/// One training example in normalised coordinates.
#[derive(Debug, Clone)]
pub struct Sample {
    pub item: ItemKey,
    pub view: usize,
    pub points: Vec<Vec3>,
    pub aligned: Vec<Vec3>,
    pub class: usize,
    pub affordance: Vec<f64>,
    pub offsets: Array2<f64>,
    /// Cloud index of the ground-truth contact.
    pub contact_index: usize,
    /// Normaliser scale, metres per unit.
    pub scale: f64,
}

/// Teacher-forced samples: ground-truth class and contact align the template,
/// and view `v` pairs with trajectory `v mod (number planned)`.
pub fn make_samples(items: &[&ItemData], db: &TemplateDb) -> Vec<Sample> {
    let mut out = Vec::new();
    for data in items {
        let Some(gt) = data.gt.as_ref() else { continue };
        let skts = gt.successful();
        let Some(canonical) = gt.canonical() else { continue };
        let class = db.label_of(&canonical.positions());
        for (v, (cloud, aff)) in data.clouds.iter().zip(&data.affordance).enumerate() {
            let target = skts[v % skts.len()].positions();
            let nz = Normalizer::fit(&cloud.points);
            let contact = cloud.points[aff.contact_index];
            let aligned = align_template(&db.templates[class], &contact);
            let offsets = Array2::from_shape_fn((target.len(), 3), |(i, j)| (target[i][j] - aligned[i][j]) / nz.scale);
            out.push(Sample {
                item: data.key,
                view: v,
                points: cloud.points.iter().map(|p| nz.apply(p)).collect(),
                aligned: aligned.iter().map(|p| nz.apply(p)).collect(),
                class,
                affordance: aff.values.clone(),
                offsets,
                contact_index: aff.contact_index,
                scale: nz.scale,
            });
        }
    }
    out
}
