//! SE(3) pose algebra, SKT containers, rotation construction from motion and
//! gravity, and piecewise-linear arc-length resampling.
//!
//! Conventions: every pose lives in the supporting item's frame, gravity is
//! `(0, 0, -1)` in that frame, and waypoint 0 of an SKT is the hanging end.
//! Execution walks the waypoints from `T - 1` down to `0`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::{Mat3, Vec3};

/// Forward vectors shorter than this are rejected.
pub const MIN_FORWARD_NORM: f64 = 1e-9;
/// Forward vectors within this angle (radians) of gravity are degenerate.
pub const PARALLEL_ANGLE_TOL: f64 = 1e-6;
/// Minimum spacing for an adjacent waypoint pair to define a direction.
pub const MIN_SPACING: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("forward direction is zero or parallel to gravity")]
    DegenerateForward,
    #[error("trajectory has no two distinct waypoints")]
    DegenerateTrajectory,
    #[error("path has zero arc length or fewer than two points")]
    DegeneratePath,
    #[error("requested {0} output points; at least 2 are needed")]
    TooFewOutputPoints(usize),
    #[error("rotation is not a proper orthonormal matrix (deviation {0:e})")]
    InvalidRotation(f64),
}

/// Unit gravity direction. Fixed to `(0, 0, -1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gravity {
    direction: Vec3,
}

impl Gravity {
    pub fn down() -> Self {
        Gravity {
            direction: Vec3::new(0.0, 0.0, -1.0),
        }
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }
}

impl Default for Gravity {
    fn default() -> Self {
        Gravity::down()
    }
}

/// A rigid transform: `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose after checking the rotation is proper orthonormal.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let dev = rotation_deviation(&rotation);
        if dev > 1e-9 {
            return Err(GeometryError::InvalidRotation(dev));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Column `i` of the rotation (the pose's local axis `i` in the parent frame).
    pub fn axis(&self, i: usize) -> Vec3 {
        self.rotation.column(i).into_owned()
    }

    pub fn is_valid(&self) -> bool {
        rotation_deviation(&self.rotation) <= 1e-9
            && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Max of `|RᵀR − I|` and `|det R − 1|`.
pub fn rotation_deviation(r: &Mat3) -> f64 {
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    t: [f64; 3],
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = &self.rotation;
        PoseRecord {
            t: [self.translation.x, self.translation.y, self.translation.z],
            r: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = PoseRecord::deserialize(d)?;
        let r = rec.r;
        Ok(Pose {
            rotation: Mat3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            translation: Vec3::new(rec.t[0], rec.t[1], rec.t[2]),
        })
    }
}

/// An ordered list of keypoint poses in a supporting item's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkTrajectory {
    pub frame_id: String,
    pub positions_only: bool,
    pub waypoints: Vec<Pose>,
}

impl SkTrajectory {
    /// Wraps positions with identity rotations and `positions_only = true`.
    pub fn from_positions(frame_id: impl Into<String>, positions: &[Vec3]) -> Self {
        SkTrajectory {
            frame_id: frame_id.into(),
            positions_only: true,
            waypoints: positions.iter().map(|p| Pose::from_translation(*p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.waypoints.iter().map(|w| w.translation).collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Columns `(x, y, z)` with `x = unit(forward)`, `y = unit(x × g)`, `z = x × y`.
pub fn make_rotation(forward: &Vec3, gravity: &Gravity) -> Result<Mat3, GeometryError> {
    let n = forward.norm();
    if !(n > MIN_FORWARD_NORM) {
        return Err(GeometryError::DegenerateForward);
    }
    let x = forward / n;
    let cross = x.cross(&gravity.direction());
    // |x × g| = sin(angle) for unit vectors.
    let s = cross.norm();
    if s < PARALLEL_ANGLE_TOL.sin() {
        return Err(GeometryError::DegenerateForward);
    }
    let y = cross / s;
    let z = x.cross(&y);
    Ok(Mat3::from_columns(&[x, y, z]))
}

/// Rotation for `forward`, falling back to `fallback` when `forward` is
/// degenerate and to world `+x` when neither works.
pub fn make_rotation_or(forward: &Vec3, fallback: Option<&Vec3>, gravity: &Gravity) -> Mat3 {
    make_rotation(forward, gravity)
        .or_else(|_| match fallback {
            Some(f) => make_rotation(f, gravity),
            None => Err(GeometryError::DegenerateForward),
        })
        .unwrap_or_else(|_| {
            make_rotation(&Vec3::x(), gravity).expect("+x is never parallel to gravity")
        })
}

/// Lifts a position-only trajectory to SE(3).
///
/// Waypoint `i >= 1` points its x-axis along the motion toward waypoint
/// `i - 1`; waypoint 0 copies waypoint 1. Zero-length or vertical steps take
/// the x-axis of the waypoint executed just before them (index `i + 1`), or
/// world `+x` when there is none.
pub fn augment_trajectory(
    positions: &[Vec3],
    gravity: &Gravity,
    frame_id: &str,
) -> Result<SkTrajectory, GeometryError> {
    let t = positions.len();
    if t < 2 {
        return Err(GeometryError::DegenerateTrajectory);
    }
    let any_motion = positions
        .windows(2)
        .any(|w| (w[0] - w[1]).norm() > MIN_SPACING);
    if !any_motion {
        return Err(GeometryError::DegenerateTrajectory);
    }

    let mut axes: Vec<Option<Vec3>> = vec![None; t];
    let mut last: Option<Vec3> = None;
    for i in (1..t).rev() {
        let d = positions[i - 1] - positions[i];
        let candidate = if d.norm() > MIN_SPACING && make_rotation(&d, gravity).is_ok() {
            Some(d.normalize())
        } else {
            None
        };
        let x = candidate.or(last).unwrap_or_else(Vec3::x);
        axes[i] = Some(x);
        last = Some(x);
    }
    axes[0] = axes[1];

    let waypoints = positions
        .iter()
        .zip(axes)
        .map(|(p, x)| {
            let x = x.expect("filled above");
            Pose {
                rotation: make_rotation_or(&x, None, gravity),
                translation: *p,
            }
        })
        .collect();
    Ok(SkTrajectory {
        frame_id: frame_id.to_string(),
        positions_only: false,
        waypoints,
    })
}

/// `T^ee_kpt = (T^kpt)^-1 T^ee`, so that `T^kpt ∘ result = T^ee`.
pub fn relative_grasp(kpt: &Pose, ee: &Pose) -> Pose {
    kpt.inverse().compose(ee)
}

/// Cumulative arc length at each vertex of a polyline.
pub fn cumulative_lengths(points: &[Vec3]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(points.len());
    let mut s = 0.0;
    acc.push(0.0);
    for w in points.windows(2) {
        s += (w[1] - w[0]).norm();
        acc.push(s);
    }
    acc
}

/// Point at arc length `s` along a polyline with precomputed cumulative lengths.
pub fn point_at_arclength(points: &[Vec3], cum: &[f64], s: f64) -> Vec3 {
    let total = *cum.last().unwrap_or(&0.0);
    if s <= 0.0 {
        return points[0];
    }
    if s >= total {
        return points[points.len() - 1];
    }
    // first index with cum > s
    let hi = cum.partition_point(|&c| c <= s);
    let lo = hi - 1;
    let seg = cum[hi] - cum[lo];
    if seg <= 0.0 {
        return points[lo];
    }
    let u = (s - cum[lo]) / seg;
    points[lo] + (points[hi] - points[lo]) * u
}

/// Resamples a polyline to `count` points evenly spaced in arc length.
/// Endpoints are copied exactly.
pub fn resample_path(points: &[Vec3], count: usize) -> Result<Vec<Vec3>, GeometryError> {
    if count < 2 {
        return Err(GeometryError::TooFewOutputPoints(count));
    }
    if points.len() < 2 {
        return Err(GeometryError::DegeneratePath);
    }
    let cum = cumulative_lengths(points);
    let total = cum[cum.len() - 1];
    if !(total > 1e-9) {
        return Err(GeometryError::DegeneratePath);
    }
    let mut out = Vec::with_capacity(count);
    out.push(points[0]);
    for j in 1..count - 1 {
        let s = total * j as f64 / (count - 1) as f64;
        out.push(point_at_arclength(points, &cum, s));
    }
    out.push(points[points.len() - 1]);
    Ok(out)
}

/// Rotation used between two execution waypoints: the x-axes are blended
/// linearly and renormalised, then the gravity construction is reapplied.
pub fn blend_rotation(a: &Mat3, b: &Mat3, u: f64, gravity: &Gravity) -> Mat3 {
    let xa: Vec3 = a.column(0).into_owned();
    let xb: Vec3 = b.column(0).into_owned();
    let x = xa * (1.0 - u) + xb * u;
    make_rotation_or(&x, Some(&xa), gravity)
}
