//! RRT-Connect over keypoint positions and SKT post-processing.
//!
//! Orientation is never sampled: every edge carries the rotation built from
//! its execution direction (toward the hanging end), matching how a
//! position-only trajectory is later lifted to SE(3).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{augment_trajectory, blend_rotation, make_rotation_or, resample_path, GeometryError, Gravity, Pose, SkTrajectory};
use crate::rng;
use crate::scenegen::{HangObject, SupportItem};
use crate::simcheck::{self, clearance, EXECUTION_STEP, EXECUTION_TOLERANCE};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("no path after {0} iterations")]
    PlanningTimeout(usize),
    #[error("goal violates the collision tolerance (clearance {0:.4} m)")]
    InvalidGoal(f64),
    #[error("resampled trajectory collides on every replanning attempt")]
    UnsafeResample,
    #[error("no collision-free start found in the start region")]
    NoValidStart,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Aabb {
    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.hi[i] > self.lo[i])
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        Vec3::new(
            rng.gen_range(self.lo.x..self.hi.x),
            rng.gen_range(self.lo.y..self.hi.y),
            rng.gen_range(self.lo.z..self.hi.z),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub step_size: f64,
    pub max_iterations: usize,
    pub goal: Pose,
    pub start_region: Aabb,
    pub sample_region: Aabb,
    /// Extra clearance demanded away from the goal, ramped to zero near it.
    pub margin: f64,
    pub margin_ramp: f64,
    /// Seed the goal tree with a retreat along the hook (see [`corridor`]).
    pub corridor: bool,
    pub rng_seed: u64,
}

pub const DEFAULT_STEP: f64 = 0.01;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;
pub const DEFAULT_MARGIN: f64 = 0.001;
pub const DEFAULT_MARGIN_RAMP: f64 = 0.015;
/// Planning never goes behind this plane (the wall the hook is mounted on).
pub const WALL_X: f64 = 0.02;

impl PlannerConfig {
    /// Defaults for an item whose resting pose is `goal`: start box in front
    /// of and above the tip, sampling box around the item.
    pub fn for_item(item: &SupportItem, goal: Pose, rng_seed: u64) -> Self {
        let tip = item.tip();
        let (lo, hi) = item.bounds();
        let start_region = Aabb {
            lo: Vec3::new(tip.x.max(hi.x) + 0.05, -0.02, tip.z + 0.01),
            hi: Vec3::new(tip.x.max(hi.x) + 0.09, 0.02, tip.z + 0.05),
        };
        let sample_region = Aabb {
            lo: Vec3::new(WALL_X, lo.y - 0.06, lo.z - 0.06),
            hi: Vec3::new(start_region.hi.x + 0.02, hi.y + 0.06, start_region.hi.z + 0.04),
        };
        PlannerConfig {
            step_size: DEFAULT_STEP,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            goal,
            start_region,
            sample_region,
            margin: DEFAULT_MARGIN,
            margin_ramp: DEFAULT_MARGIN_RAMP,
            corridor: true,
            rng_seed,
        }
    }
}

/// Collision model shared by the planner and the shortcut smoother.
pub struct Checker<'a> {
    pub item: &'a SupportItem,
    pub object: &'a HangObject,
    pub goal: Vec3,
    pub margin: f64,
    pub margin_ramp: f64,
    gravity: Gravity,
}

impl<'a> Checker<'a> {
    pub fn new(item: &'a SupportItem, object: &'a HangObject, cfg: &PlannerConfig) -> Self {
        Checker {
            item,
            object,
            goal: cfg.goal.translation,
            margin: cfg.margin,
            margin_ramp: cfg.margin_ramp,
            gravity: Gravity::down(),
        }
    }

    /// Clearance demanded at `p`: `margin` away from the goal, easing to the
    /// execution tolerance at the goal itself.
    pub fn required(&self, p: &Vec3) -> f64 {
        let ramp = if self.margin_ramp > 0.0 {
            ((p - self.goal).norm() / self.margin_ramp).min(1.0)
        } else {
            1.0
        };
        self.margin * ramp - EXECUTION_TOLERANCE * (1.0 - ramp)
    }

    pub fn rotation_for(&self, direction: &Vec3) -> crate::Mat3 {
        make_rotation_or(direction, None, &self.gravity)
    }

    /// Motion from `a` to `b` (execution order) is collision-free at every
    /// interpolation step, including `b` but not `a`.
    pub fn edge_free(&self, a: &Vec3, b: &Vec3) -> bool {
        let d = b - a;
        let len = d.norm();
        if len < 1e-12 {
            return true;
        }
        let rotation = self.rotation_for(&d);
        let n = ((len / EXECUTION_STEP).ceil() as usize).max(1);
        (1..=n).all(|s| {
            let p = a + d * (s as f64 / n as f64);
            clearance(&Pose { rotation, translation: p }, self.object, self.item) >= self.required(&p)
        })
    }

    /// Turning in place at `p` from the rotation of direction `from` to that
    /// of direction `to` stays clear, sampled like execution does.
    pub fn turn_free(&self, p: &Vec3, from: &Vec3, to: &Vec3) -> bool {
        let (ra, rb) = (self.rotation_for(from), self.rotation_for(to));
        let cos = ra.column(0).dot(&rb.column(0)).clamp(-1.0, 1.0);
        let turns = (cos.acos() / simcheck::TURN_STEP).ceil() as usize;
        let need = self.required(p);
        (1..turns).all(|s| {
            let rotation = blend_rotation(&ra, &rb, s as f64 / turns as f64, &self.gravity);
            clearance(&Pose { rotation, translation: *p }, self.object, self.item) >= need
        })
    }

    /// Every pose visited while executing `skt` stays within the execution
    /// tolerance.
    pub fn trajectory_free(&self, skt: &SkTrajectory) -> bool {
        simcheck::execution_poses(skt, EXECUTION_STEP)
            .iter()
            .all(|p| clearance(p, self.object, self.item) >= -EXECUTION_TOLERANCE)
    }
}

struct Tree {
    nodes: Vec<Vec3>,
    parent: Vec<usize>,
    /// Execution direction of the edge joining a node to its parent
    /// (`None` at the root). Start tree edges run parent -> child in
    /// execution order, goal tree edges run child -> parent.
    dir: Vec<Option<Vec3>>,
    toward_goal: bool,
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

impl Tree {
    fn new(root: Vec3, toward_goal: bool) -> Self {
        Tree {
            nodes: vec![root],
            parent: vec![usize::MAX],
            dir: vec![None],
            toward_goal,
        }
    }

    fn nearest(&self, q: &Vec3) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn extend(&mut self, q: &Vec3, step: f64, checker: &Checker) -> Extend {
        let near = self.nearest(q);
        let from = self.nodes[near];
        let d = q - from;
        let dist = d.norm();
        if dist < 1e-12 {
            return Extend::Reached(near);
        }
        let (to, reached) = if dist <= step { (*q, true) } else { (from + d * (step / dist), false) };
        let (free, edge_dir) = if self.toward_goal {
            let e = to - from;
            let turn = self.dir[near].map_or(true, |prev| checker.turn_free(&from, &prev, &e));
            (turn && checker.edge_free(&from, &to), e)
        } else {
            let e = from - to;
            let turn = self.dir[near].map_or(true, |next| checker.turn_free(&from, &e, &next));
            (turn && checker.edge_free(&to, &from), e)
        };
        if !free {
            return Extend::Trapped;
        }
        self.nodes.push(to);
        self.parent.push(near);
        self.dir.push(Some(edge_dir));
        let id = self.nodes.len() - 1;
        if reached {
            Extend::Reached(id)
        } else {
            Extend::Advanced(id)
        }
    }

    fn connect(&mut self, q: &Vec3, step: f64, checker: &Checker) -> Option<usize> {
        loop {
            match self.extend(q, step, checker) {
                Extend::Trapped => return None,
                Extend::Reached(id) => return Some(id),
                Extend::Advanced(_) => {}
            }
        }
    }

    fn path_to_root(&self, mut id: usize) -> Vec<Vec3> {
        let mut out = Vec::new();
        while id != usize::MAX {
            out.push(self.nodes[id]);
            id = self.parent[id];
        }
        out
    }
}

pub const CORRIDOR_STEP: f64 = 0.005;
/// Distance over which the corridor lifts from resting to centred.
pub const CORRIDOR_LIFT: f64 = 0.015;
/// How far the corridor continues past the tip.
pub const CORRIDOR_EXIT: f64 = 0.04;
pub const CORRIDOR_WINDOW: f64 = 0.01;

/// Keypoint positions retracing the hook from the goal out past its tip,
/// with the ring gradually lifted so the rod runs through its centre.
/// The goal itself is not included.
pub fn corridor(item: &SupportItem, object: &HangObject, goal: &Vec3) -> Vec<Vec3> {
    let g = Gravity::down();
    let pts = &item.centerline;
    let cum = crate::geometry::cumulative_lengths(pts);
    let total = cum[cum.len() - 1];
    // arc length of the centerline point under the goal
    let mut s0 = (0.0, f64::INFINITY);
    for (k, w) in pts.windows(2).enumerate() {
        let t = crate::scenegen::item::segment_param(goal, &w[0], &w[1]);
        let d = (w[0] + (w[1] - w[0]) * t - goal).norm();
        if d < s0.1 {
            s0 = (cum[k] + t * (cum[k + 1] - cum[k]), d);
        }
    }
    let s0 = s0.0;
    let tip = item.tip();
    let tip_dir = item.tip_direction();
    let raw = |s: f64| -> Vec3 {
        if s <= total {
            crate::geometry::point_at_arclength(pts, &cum, s.max(0.0))
        } else {
            tip + tip_dir * (s - total)
        }
    };
    // centerline averaged over a window so elbows become gentle turns
    let at = |s: f64| -> (Vec3, Vec3) {
        let n = 8;
        let mut q = Vec3::zeros();
        for k in 0..=n {
            q += raw(s - CORRIDOR_WINDOW + 2.0 * CORRIDOR_WINDOW * k as f64 / n as f64);
        }
        q /= (n + 1) as f64;
        let tangent = raw(s + CORRIDOR_WINDOW) - raw(s - CORRIDOR_WINDOW);
        (q, tangent.normalize())
    };
    let rest = goal - at(s0).0;
    let centred = object.ring_radius - object.tube_radius;
    let mut out = Vec::new();
    let mut s = s0 + CORRIDOR_STEP;
    while s <= total + CORRIDOR_EXIT {
        let (q, tangent) = at(s);
        // motion toward the goal runs against the tangent
        let z: Vec3 = make_rotation_or(&-tangent, None, &g).column(2).into_owned();
        let u = ((s - s0) / CORRIDOR_LIFT).min(1.0);
        out.push(q + rest * (1.0 - u) + z * (centred * u));
        s += CORRIDOR_STEP;
    }
    out
}

/// Adds the valid prefix of the corridor to the goal tree as a chain.
fn seed_corridor(tree: &mut Tree, item: &SupportItem, object: &HangObject, checker: &Checker) {
    let mut parent = 0;
    for p in corridor(item, object, &tree.nodes[0]) {
        let next = tree.nodes[parent];
        let e = next - p;
        if e.norm() < 1e-9 {
            continue;
        }
        let turn_ok = tree.dir[parent].map_or(true, |d| checker.turn_free(&next, &e, &d));
        if !(turn_ok && checker.edge_free(&p, &next)) {
            break;
        }
        tree.nodes.push(p);
        tree.parent.push(parent);
        tree.dir.push(Some(e));
        parent = tree.nodes.len() - 1;
    }
}

/// Share of samples drawn near the goal and near the corridor.
pub const GOAL_BIAS: f64 = 0.25;
pub const CORRIDOR_BIAS: f64 = 0.25;
const GOAL_BALL: f64 = 0.03;
const CORRIDOR_JITTER: f64 = 0.006;

fn biased_sample(cfg: &PlannerConfig, goal: &Vec3, guide: &[Vec3], rng: &mut ChaCha8Rng) -> Vec3 {
    let u: f64 = rng.gen();
    let jitter = |rng: &mut ChaCha8Rng, r: f64| {
        Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
    };
    if u < GOAL_BIAS {
        goal + jitter(rng, GOAL_BALL)
    } else if u < GOAL_BIAS + CORRIDOR_BIAS && !guide.is_empty() {
        guide[rng.gen_range(0..guide.len())] + jitter(rng, CORRIDOR_JITTER)
    } else {
        cfg.sample_region.sample(rng)
    }
}

fn sample_start(cfg: &PlannerConfig, checker: &Checker, rng: &mut ChaCha8Rng) -> Result<Vec3, PlannerError> {
    let toward = checker.rotation_for(&-Vec3::x());
    for _ in 0..200 {
        let p = cfg.start_region.sample(rng);
        let c = clearance(&Pose { rotation: toward, translation: p }, checker.object, checker.item);
        if c >= checker.required(&p) {
            return Ok(p);
        }
    }
    Err(PlannerError::NoValidStart)
}

/// Bidirectional RRT from a start in the start region to the goal
/// translation. Returns the path in start-to-goal order.
pub fn plan_raw(item: &SupportItem, object: &HangObject, cfg: &PlannerConfig) -> Result<Vec<Vec3>, PlannerError> {
    let goal = cfg.goal.translation;
    let c = clearance(&cfg.goal, object, item);
    if c < -EXECUTION_TOLERANCE {
        return Err(PlannerError::InvalidGoal(c));
    }
    let checker = Checker::new(item, object, cfg);
    let mut rng = rng::stream(cfg.rng_seed, "rrt-connect", 0);
    let start = sample_start(cfg, &checker, &mut rng)?;

    // a clean straight shot needs no tree
    if checker.edge_free(&start, &goal) {
        return Ok(vec![start, goal]);
    }

    let mut a = Tree::new(start, true);
    let mut b = Tree::new(goal, false);
    if cfg.corridor {
        seed_corridor(&mut b, item, object, &checker);
    }
    let guide = corridor(item, object, &goal);
    for _ in 0..cfg.max_iterations {
        let q = biased_sample(cfg, &goal, &guide, &mut rng);
        if let Extend::Advanced(id) | Extend::Reached(id) = a.extend(&q, cfg.step_size, &checker) {
            let target = a.nodes[id];
            if let Some(jd) = b.connect(&target, cfg.step_size, &checker) {
                let (s, si, t, ti) = if a.toward_goal { (&a, id, &b, jd) } else { (&b, jd, &a, id) };
                // the turn where the trees meet has not been checked yet
                let meet = s.nodes[si];
                let joint_ok = match (s.dir[si], t.dir[ti]) {
                    (Some(i), Some(o)) => checker.turn_free(&meet, &i, &o),
                    _ => true,
                };
                if joint_ok {
                    let mut path = s.path_to_root(si);
                    path.reverse();
                    // both trees hold the meeting point; keep it once
                    path.extend(t.path_to_root(ti).into_iter().skip(1));
                    return Ok(path);
                }
            }
        }
        std::mem::swap(&mut a, &mut b);
    }
    Err(PlannerError::PlanningTimeout(cfg.max_iterations))
}

pub fn path_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Random shortcutting of a start-to-goal path; a shortcut is accepted only
/// when the straight replacement and the turns at both of its ends are
/// collision-free.
pub fn shortcut(path: &[Vec3], checker: &Checker, attempts: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let mut path = path.to_vec();
    for _ in 0..attempts {
        if path.len() < 3 {
            break;
        }
        let i = rng.gen_range(0..path.len() - 2);
        let j = rng.gen_range(i + 2..path.len());
        let e = path[j] - path[i];
        let ok_in = i == 0 || checker.turn_free(&path[i], &(path[i] - path[i - 1]), &e);
        let ok_out = j + 1 == path.len() || checker.turn_free(&path[j], &e, &(path[j + 1] - path[j]));
        if ok_in && ok_out && checker.edge_free(&path[i], &path[j]) {
            path.drain(i + 1..j);
        }
    }
    path
}

pub struct Smoothing<'a> {
    pub checker: &'a Checker<'a>,
    pub attempts: usize,
    pub seed: u64,
}

/// Reverses a planned path so index 0 is the hanging end, optionally
/// shortcuts it, resamples it to `t` points and lifts it to SE(3).
pub fn make_skt(
    raw_path: &[Vec3],
    t: usize,
    gravity: &Gravity,
    frame_id: &str,
    smoothing: Option<&Smoothing>,
) -> Result<SkTrajectory, PlannerError> {
    let smoothed = match smoothing {
        Some(s) => {
            let mut rng = rng::stream(s.seed, "shortcut", 0);
            shortcut(raw_path, s.checker, s.attempts, &mut rng)
        }
        None => raw_path.to_vec(),
    };
    let mut rev = smoothed;
    rev.reverse();
    let positions = resample_path(&rev, t)?;
    Ok(augment_trajectory(&positions, gravity, frame_id)?)
}

/// Ground-truth SKT for one (item, seed): settled goal, plan, smooth, resample.
pub struct GtPlan {
    pub skt: SkTrajectory,
    pub raw: Vec<Vec3>,
    pub smoothed_length: f64,
    /// Planning rounds used; resampling can cut corners, so the emitted
    /// trajectory is swept again and replanned with a derived seed on
    /// collision.
    pub attempts: usize,
}

pub const SHORTCUT_ATTEMPTS: usize = 200;
pub const MAX_PLAN_ATTEMPTS: usize = 8;

pub fn plan_gt(
    item: &SupportItem,
    object: &HangObject,
    goal: &Pose,
    t: usize,
    seed: u64,
) -> Result<GtPlan, PlannerError> {
    let mut last_err = PlannerError::PlanningTimeout(0);
    for attempt in 0..MAX_PLAN_ATTEMPTS {
        let round_seed = if attempt == 0 { seed } else { rng::derive_seed(seed, "replan", attempt as u64) };
        let cfg = PlannerConfig::for_item(item, *goal, round_seed);
        let raw = match plan_raw(item, object, &cfg) {
            Ok(r) => r,
            Err(e @ PlannerError::InvalidGoal(_)) => return Err(e),
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        let checker = Checker::new(item, object, &cfg);
        let mut rng = rng::stream(round_seed, "shortcut", 0);
        let smoothed = shortcut(&raw, &checker, SHORTCUT_ATTEMPTS, &mut rng);
        let skt = make_skt(&smoothed, t, &Gravity::down(), &item.frame_id(), None)?;
        if checker.trajectory_free(&skt) {
            return Ok(GtPlan {
                skt,
                raw,
                smoothed_length: path_length(&smoothed),
                attempts: attempt + 1,
            });
        }
        last_err = PlannerError::UnsafeResample;
    }
    Err(last_err)
}

/// Re-exported so callers can judge planned trajectories without importing
/// the oracle module.
pub use simcheck::execute_and_judge;
