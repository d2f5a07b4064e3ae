//! Quasi-static hanging oracle: clearance, ring linking, gravity settle,
//! contact extraction and trajectory execution.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{blend_rotation, make_rotation, Gravity, Pose, SkTrajectory};
use crate::scenegen::{HangObject, PlacedObject, SupportItem};
use crate::Vec3;

pub const RING_SAMPLES: usize = 64;
/// Penetration tolerated while executing a trajectory.
pub const EXECUTION_TOLERANCE: f64 = 0.002;
pub const EXECUTION_STEP: f64 = 0.002;
pub const SETTLE_STEP: f64 = 0.001;
pub const SLIDE_STEP: f64 = 0.0005;
pub const GRADIENT_STEP: f64 = 0.0005;
pub const SETTLE_MAX_ITERATIONS: usize = 2000;
pub const FRONT_OFFSET: f64 = 0.15;
/// Below this clearance the ring is considered in contact.
const CONTACT_EPS: f64 = 5e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(&'static str),
    #[error("no stable contact found on item {0}")]
    NoStableContact(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureMode {
    None,
    CollisionDuringExecution,
    NotLinkedAtEnd,
    SlippedOffOnSettle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HangOutcome {
    pub success: bool,
    pub failure_mode: FailureMode,
    pub max_penetration: f64,
    pub settled_pose: Pose,
}

fn ring_angles() -> impl Iterator<Item = f64> {
    (0..RING_SAMPLES).map(|k| 2.0 * PI * k as f64 / RING_SAMPLES as f64)
}

/// Clearance of an already placed object, with the ring sample index that
/// attains the minimum (`None` when the body is closest).
pub fn placed_clearance(placed: &PlacedObject, item: &SupportItem) -> (f64, Option<usize>) {
    let mut best = (f64::INFINITY, None);
    for (k, a) in ring_angles().enumerate() {
        let d = item.signed_distance(&placed.ring_point(a)) - placed.tube_radius;
        if d < best.0 {
            best = (d, Some(k));
        }
    }
    let body = item.segment_clearance(&placed.body.a, &placed.body.b) - placed.body.radius;
    if body < best.0 {
        best = (body, None);
    }
    best
}

/// Minimum surface-to-surface distance between the posed object and the
/// item; negative values are penetration depths.
pub fn clearance(ring_pose: &Pose, object: &HangObject, item: &SupportItem) -> f64 {
    placed_clearance(&object.place(ring_pose), item).0
}

/// Whether the item's centerline threads the ring aperture: the oriented
/// number of crossings through the ring disc is odd.
pub fn linked(ring_pose: &Pose, object: &HangObject, item: &SupportItem) -> bool {
    let placed = object.place(ring_pose);
    let c = placed.ring_center;
    let n = placed.ring_normal;
    let r2 = placed.ring_radius * placed.ring_radius;
    let mut oriented = 0i64;
    for w in item.centerline.windows(2) {
        let sa = (w[0] - c).dot(&n);
        let sb = (w[1] - c).dot(&n);
        // half-open sides so a vertex on the plane is counted once
        if (sa < 0.0) == (sb < 0.0) {
            continue;
        }
        let p = w[0] + (w[1] - w[0]) * (sa / (sa - sb));
        if (p - c).norm_squared() < r2 {
            oriented += if sb > sa { 1 } else { -1 };
        }
    }
    oriented.rem_euclid(2) == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettleResult {
    pub pose: Pose,
    pub iterations: usize,
    pub max_iterations: bool,
    /// Final clearance is within the contact band.
    pub in_contact: bool,
}

fn with_translation(pose: &Pose, t: Vec3) -> Pose {
    Pose {
        rotation: pose.rotation,
        translation: t,
    }
}

/// Central-difference gradient of clearance with respect to translation.
pub fn clearance_gradient(pose: &Pose, object: &HangObject, item: &SupportItem) -> Vec3 {
    let mut g = Vec3::zeros();
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = GRADIENT_STEP;
        let hi = clearance(&with_translation(pose, pose.translation + e), object, item);
        let lo = clearance(&with_translation(pose, pose.translation - e), object, item);
        g[i] = (hi - lo) / (2.0 * GRADIENT_STEP);
    }
    g
}

/// Moves along the clearance gradient until clearance is non-negative.
fn project_out(t: Vec3, pose: &Pose, object: &HangObject, item: &SupportItem, rounds: usize) -> Option<Vec3> {
    let mut t = t;
    for _ in 0..rounds {
        let p = with_translation(pose, t);
        let c = clearance(&p, object, item);
        if c >= 0.0 {
            return Some(t);
        }
        let g = clearance_gradient(&p, object, item);
        let gn = g.norm();
        if gn < 1e-6 {
            return None;
        }
        t += g / gn * (-c + 1e-6) / gn.min(1.0);
    }
    let c = clearance(&with_translation(pose, t), object, item);
    (c >= 0.0).then_some(t)
}

/// Quasi-static descent along gravity with tangential sliding on contact.
/// Rotation is held fixed.
pub fn settle(start_pose: &Pose, object: &HangObject, item: &SupportItem) -> SettleResult {
    let g = Gravity::down().direction();
    let mut t = start_pose.translation;
    if clearance(start_pose, object, item) < 0.0 {
        if let Some(out) = project_out(t, start_pose, object, item, 50) {
            t = out;
        }
    }
    let mut iterations = 0;
    while iterations < SETTLE_MAX_ITERATIONS {
        iterations += 1;
        let pose = with_translation(start_pose, t);
        let c = clearance(&pose, object, item);
        if c > CONTACT_EPS {
            // clearance is 1-Lipschitz, so a drop of `c` cannot penetrate
            t += g * c.min(SETTLE_STEP);
            continue;
        }
        let n = clearance_gradient(&pose, object, item);
        let nn = n.norm();
        if nn < 1e-9 {
            break;
        }
        let n = n / nn;
        let tangent = g - n * g.dot(&n);
        if tangent.norm() < 1e-3 {
            break;
        }
        let cand = t + tangent.normalize() * SLIDE_STEP;
        let Some(cand) = project_out(cand, &pose, object, item, 8) else {
            break;
        };
        if cand.dot(&g) <= t.dot(&g) + 1e-7 {
            break;
        }
        t = cand;
    }
    let pose = with_translation(start_pose, t);
    let c = clearance(&pose, object, item);
    SettleResult {
        pose,
        iterations,
        max_iterations: iterations >= SETTLE_MAX_ITERATIONS,
        in_contact: c <= SETTLE_STEP,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub contact_point: Vec3,
    pub p_hang: Vec3,
    pub p_front: Vec3,
    pub settled_pose: Pose,
}

impl Contact {
    pub fn forward(&self) -> Vec3 {
        (self.p_hang - self.p_front).normalize()
    }
}

/// Item surface point nearest the ring at the given pose.
pub fn contact_point(pose: &Pose, object: &HangObject, item: &SupportItem) -> Vec3 {
    let placed = object.place(pose);
    let (_, idx) = placed_clearance(&placed, item);
    let probe = match idx {
        Some(k) => placed.ring_point(2.0 * PI * k as f64 / RING_SAMPLES as f64),
        None => placed.body.a,
    };
    item.closest_surface_point(&probe).0
}

/// Drops the object onto the hook from just behind its tip and returns the
/// resting keypoint and contact point. The approach axis is world `+x`.
pub fn find_contact(item: &SupportItem, object: &HangObject) -> Result<Contact, SimError> {
    let g = Gravity::down();
    let rotation = make_rotation(&-Vec3::x(), &g).expect("horizontal forward");
    let lift = object.ring_radius - object.tube_radius;
    let cum = crate::geometry::cumulative_lengths(&item.centerline);
    let total = cum[cum.len() - 1];
    let step = 0.005;
    let mut s = total - step;
    while s > 0.0 {
        let q = crate::geometry::point_at_arclength(&item.centerline, &cum, s);
        s -= step;
        // rod threads the ring centre; keypoint sits on the inner top edge
        let pose = Pose {
            rotation,
            translation: q + rotation.column(2).into_owned() * lift,
        };
        if !linked(&pose, object, item) || clearance(&pose, object, item) < 0.0 {
            continue;
        }
        let settled = settle(&pose, object, item);
        if settled.max_iterations || !settled.in_contact || !linked(&settled.pose, object, item) {
            continue;
        }
        let p_hang = settled.pose.translation;
        return Ok(Contact {
            contact_point: contact_point(&settled.pose, object, item),
            p_hang,
            p_front: p_hang + Vec3::x() * FRONT_OFFSET,
            settled_pose: settled.pose,
        });
    }
    Err(SimError::NoStableContact(item.frame_id()))
}

/// Angular step used when turning in place at a waypoint.
pub const TURN_STEP: f64 = 5.0 * PI / 180.0;

/// Poses visited when executing `skt` from the last waypoint to the first.
///
/// Waypoint `i` already faces waypoint `i - 1`, so each segment is
/// translated at constant rotation in steps of at most `step` metres; the
/// object then turns in place to the next waypoint's rotation in steps of at
/// most [`TURN_STEP`].
pub fn execution_poses(skt: &SkTrajectory, step: f64) -> Vec<Pose> {
    let g = Gravity::down();
    let w = &skt.waypoints;
    let mut out = vec![w[w.len() - 1]];
    for i in (1..w.len()).rev() {
        let (a, b) = (&w[i], &w[i - 1]);
        let n = (((b.translation - a.translation).norm() / step).ceil() as usize).max(1);
        for s in 1..=n {
            out.push(Pose {
                rotation: a.rotation,
                translation: a.translation.lerp(&b.translation, s as f64 / n as f64),
            });
        }
        let cos = a.rotation.column(0).dot(&b.rotation.column(0)).clamp(-1.0, 1.0);
        let turns = (cos.acos() / TURN_STEP).ceil() as usize;
        for s in 1..=turns {
            out.push(Pose {
                rotation: if s == turns {
                    b.rotation
                } else {
                    blend_rotation(&a.rotation, &b.rotation, s as f64 / turns as f64, &g)
                },
                translation: b.translation,
            });
        }
    }
    out
}

/// Executes an SE(3) trajectory with the object and judges whether it ends
/// hanging.
pub fn execute_and_judge(skt: &SkTrajectory, object: &HangObject, item: &SupportItem) -> Result<HangOutcome, SimError> {
    if skt.positions_only {
        return Err(SimError::InvalidTrajectory("positions only; augment first"));
    }
    if skt.len() < 2 {
        return Err(SimError::InvalidTrajectory("fewer than two waypoints"));
    }
    let mut max_pen: f64 = 0.0;
    for pose in execution_poses(skt, EXECUTION_STEP) {
        let pen = -clearance(&pose, object, item);
        max_pen = max_pen.max(pen);
        if pen > EXECUTION_TOLERANCE {
            return Ok(HangOutcome {
                success: false,
                failure_mode: FailureMode::CollisionDuringExecution,
                max_penetration: max_pen,
                settled_pose: pose,
            });
        }
    }
    let end = skt.waypoints[0];
    let linked_before = linked(&end, object, item);
    let settled = settle(&end, object, item);
    let hangs = !settled.max_iterations && linked(&settled.pose, object, item);
    let failure_mode = if hangs {
        FailureMode::None
    } else if linked_before {
        FailureMode::SlippedOffOnSettle
    } else {
        FailureMode::NotLinkedAtEnd
    };
    Ok(HangOutcome {
        success: hangs,
        failure_mode,
        max_penetration: max_pen.max(0.0),
        settled_pose: settled.pose,
    })
}
