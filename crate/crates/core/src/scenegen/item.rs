//! Supporting items: wall-mounted hooks described as capsule chains.
//!
//! Every hook starts at the frame origin (the wall) and extends along `+x`
//! in the `y = 0` plane, opening upward. The four difficulty tiers are
//! distinct centerline families with increasing total turning.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::Vec3;

pub const MIN_RADIUS: f64 = 0.002;
pub const MAX_RADIUS: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Normal,
    Hard,
    VeryHard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Easy,
        Difficulty::Normal,
        Difficulty::Hard,
        Difficulty::VeryHard,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Normal => "Normal",
            Difficulty::Hard => "Hard",
            Difficulty::VeryHard => "Very Hard",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportItem {
    pub centerline: Vec<Vec3>,
    /// One radius per segment (`centerline.len() - 1` entries).
    pub radii: Vec<f64>,
    pub anchor: Vec3,
    pub difficulty: Difficulty,
    pub seed: u64,
}

/// Closest point to `p` on the segment `a..b`, as a parameter in `[0, 1]`.
pub fn segment_param(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return 0.0;
    }
    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let t = segment_param(p, a, b);
    (a + (b - a) * t - p).norm()
}

/// Minimum distance between segments `p0..p1` and `q0..q1`.
pub fn segment_segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let (s, t) = segment_segment_params(p0, p1, q0, q1);
    let a = p0 + (p1 - p0) * s;
    let b = q0 + (q1 - q0) * t;
    (a - b).norm()
}

/// Closest-point parameters between two segments (clamped, robust to
/// degenerate segments).
pub fn segment_segment_params(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> (f64, f64) {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;
    if a <= EPS && e <= EPS {
        return (0.0, 0.0);
    }
    if a <= EPS {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > EPS {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

impl SupportItem {
    pub fn frame_id(&self) -> String {
        format!("{:?}-{}", self.difficulty, self.seed).to_lowercase()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vec3, Vec3, f64)> + '_ {
        self.centerline
            .windows(2)
            .zip(&self.radii)
            .map(|(w, r)| (w[0], w[1], *r))
    }

    /// Signed distance from `p` to the capsule-chain surface (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.segments()
            .map(|(a, b, r)| point_segment_distance(p, &a, &b) - r)
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest surface point to `p` together with its signed distance.
    pub fn closest_surface_point(&self, p: &Vec3) -> (Vec3, f64) {
        let mut best = (Vec3::zeros(), f64::INFINITY);
        for (a, b, r) in self.segments() {
            let t = segment_param(p, &a, &b);
            let c = a + (b - a) * t;
            let d = p - c;
            let n = d.norm();
            let sd = n - r;
            if sd < best.1 {
                let dir = if n > 1e-15 {
                    d / n
                } else {
                    // on the axis: pick any direction perpendicular to the segment
                    perpendicular(&(b - a))
                };
                best = (c + dir * r, sd);
            }
        }
        best
    }

    /// Distance from a segment (e.g. a capsule axis) to the chain surface.
    pub fn segment_clearance(&self, a: &Vec3, b: &Vec3) -> f64 {
        self.segments()
            .map(|(p, q, r)| segment_segment_distance(a, b, &p, &q) - r)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max)
    }

    /// Axis-aligned bounds of the surface.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let r = self.max_radius();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.centerline {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo - Vec3::repeat(r), hi + Vec3::repeat(r))
    }

    pub fn centroid(&self) -> Vec3 {
        let (lo, hi) = self.bounds();
        (lo + hi) * 0.5
    }

    /// Total absolute turning along the centerline, in radians.
    pub fn turning_angle(&self) -> f64 {
        turning_angle(&self.centerline)
    }

    /// Direction the hook's free end points to (last segment direction).
    pub fn tip_direction(&self) -> Vec3 {
        let n = self.centerline.len();
        (self.centerline[n - 1] - self.centerline[n - 2]).normalize()
    }

    pub fn tip(&self) -> Vec3 {
        self.centerline[self.centerline.len() - 1]
    }
}

pub fn perpendicular(v: &Vec3) -> Vec3 {
    let a = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&a).normalize()
}

pub fn turning_angle(pts: &[Vec3]) -> f64 {
    pts.windows(3)
        .map(|w| {
            let u = (w[1] - w[0]).normalize();
            let v = (w[2] - w[1]).normalize();
            u.dot(&v).clamp(-1.0, 1.0).acos()
        })
        .sum()
}

/// Planar turtle in the xz-plane; heading 0 is `+x`, positive turns bend
/// toward `+z`.
struct Turtle {
    pos: Vec3,
    heading: f64,
    pts: Vec<Vec3>,
}

impl Turtle {
    fn new(heading: f64) -> Self {
        Turtle {
            pos: Vec3::zeros(),
            heading,
            pts: vec![Vec3::zeros()],
        }
    }

    fn dir(&self) -> Vec3 {
        Vec3::new(self.heading.cos(), 0.0, self.heading.sin())
    }

    fn straight(&mut self, len: f64) {
        self.pos += self.dir() * len;
        self.pts.push(self.pos);
    }

    fn turn(&mut self, angle: f64) {
        self.heading += angle;
    }

    fn arc(&mut self, radius: f64, turn: f64) {
        let steps = ((turn.abs() / (15f64).to_radians()).ceil() as usize).max(2);
        let s = turn.signum();
        let left = Vec3::new(-self.heading.sin(), 0.0, self.heading.cos());
        let center = self.pos + left * (s * radius);
        let h0 = self.heading;
        for k in 1..=steps {
            let h = h0 + turn * k as f64 / steps as f64;
            let rel = Vec3::new(-h.sin(), 0.0, h.cos()) * (-s * radius);
            self.pts.push(center + rel);
        }
        self.heading = h0 + turn;
        self.pos = *self.pts.last().unwrap();
    }

    /// Arc about the vertical axis keeping the current climb angle; only
    /// valid as the final move since `heading` stays planar.
    fn yaw_arc(&mut self, radius: f64, turn: f64) {
        let steps = ((turn.abs() / (15f64).to_radians()).ceil() as usize).max(2);
        let d0 = self.dir();
        let horizontal = d0.x.hypot(d0.y);
        let len = radius * turn.abs() / horizontal.max(1e-9) / steps as f64;
        for k in 0..steps {
            let a = turn * (k as f64 + 0.5) / steps as f64;
            let d = Vec3::new(d0.x * a.cos(), d0.x * a.sin(), d0.z);
            self.pos += d * len;
            self.pts.push(self.pos);
        }
    }
}

fn deg(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi) * PI / 180.0
}

/// Deterministic hook for `(seed, difficulty)`.
pub fn generate_item(seed: u64, difficulty: Difficulty) -> SupportItem {
    let mut rng = rng::stream(seed, "support-item", difficulty.tag());
    let radius = rng.gen_range(0.003..0.005);
    let turtle = match difficulty {
        Difficulty::Easy => {
            // straight rod dipping slightly, then an upward L-shaped tip
            let mut t = Turtle::new(-deg(&mut rng, 2.0, 8.0));
            t.straight(rng.gen_range(0.08..0.13));
            t.turn(-t.heading + deg(&mut rng, 30.0, 50.0));
            t.straight(rng.gen_range(0.03..0.05));
            t
        }
        Difficulty::Normal => {
            // J-hook: shaft then one circular arc
            let mut t = Turtle::new(-deg(&mut rng, 12.0, 20.0));
            t.straight(rng.gen_range(0.05..0.09));
            let rho = rng.gen_range(0.025..0.035);
            t.arc(rho, deg(&mut rng, 75.0, 90.0));
            t
        }
        Difficulty::Hard => {
            // S-profile: dip down, then curve back up
            let mut t = Turtle::new(-deg(&mut rng, 0.0, 6.0));
            t.straight(rng.gen_range(0.04..0.07));
            let r1 = rng.gen_range(0.02..0.03);
            t.arc(r1, -deg(&mut rng, 35.0, 50.0));
            t.straight(rng.gen_range(0.015..0.03));
            let r2 = rng.gen_range(0.025..0.035);
            t.arc(r2, deg(&mut rng, 95.0, 115.0));
            t
        }
        Difficulty::VeryHard => {
            // S-profile whose rising tip curls sideways back toward the wall
            let mut t = Turtle::new(-deg(&mut rng, 0.0, 6.0));
            t.straight(rng.gen_range(0.035..0.06));
            let r1 = rng.gen_range(0.02..0.03);
            t.arc(r1, -deg(&mut rng, 35.0, 50.0));
            t.straight(rng.gen_range(0.01..0.025));
            let r2 = rng.gen_range(0.03..0.04);
            t.arc(r2, deg(&mut rng, 80.0, 95.0));
            let r3 = rng.gen_range(0.025..0.035);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            t.yaw_arc(r3, side * deg(&mut rng, 100.0, 130.0));
            t
        }
    };
    let centerline = turtle.pts;
    let radii = vec![radius; centerline.len() - 1];
    let anchor = lowest_point(&centerline) + Vec3::z() * radius;
    SupportItem {
        centerline,
        radii,
        anchor,
        difficulty,
        seed,
    }
}

fn lowest_point(pts: &[Vec3]) -> Vec3 {
    // ties resolved toward the tip, where the resting region sits
    let mut best = pts[0];
    for p in pts {
        if p.z <= best.z {
            best = *p;
        }
    }
    best
}
