//! Simulated single-view depth capture of a supporting item.
//!
//! Pipeline: dense surface samples of the capsule chain, back-face culling,
//! a camera-space z-buffer on a 5 mm grid (measured at the target depth) that keeps samples
//! within a thin depth band behind each cell's nearest sample, then farthest
//! point sampling down to the requested count.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::item::{perpendicular, segment_param, SupportItem};
use super::sampling::{farthest_point_sample, SamplingError};
use crate::geometry::Pose;
use crate::rng;
use crate::{Mat3, Vec3};

pub const MIN_CANDIDATES: usize = 20_000;
pub const ZBUFFER_CELL: f64 = 0.005;
pub const DEPTH_BAND: f64 = 0.002;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaptureError {
    #[error("no surface point is visible from the camera")]
    EmptyView,
    #[error("camera distance {0:.3} m outside the supported 0.3-1.0 m range")]
    CameraDistance(f64),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub source_view: String,
}

/// Camera looking from `eye` at `target`; columns are (right, down, forward)
/// so the optical axis is the camera z-axis.
pub fn look_at(eye: &Vec3, target: &Vec3) -> Pose {
    let f = (target - eye).normalize();
    let up = Vec3::z();
    let right = {
        let r = f.cross(&up);
        if r.norm() < 1e-9 {
            perpendicular(&f)
        } else {
            r.normalize()
        }
    };
    let down = f.cross(&right);
    Pose {
        rotation: Mat3::from_columns(&[right, down, f]),
        translation: *eye,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraView {
    pub id: String,
    pub pose: Pose,
}

/// `count` viewpoints spread over azimuths in front of the wall (the
/// `x > 0` half-space) with jittered elevation and distance.
pub fn camera_views(item: &SupportItem, count: usize, seed: u64) -> Vec<CameraView> {
    let target = item.centroid();
    let mut rng = rng::stream(seed, "camera-views", item.seed.wrapping_mul(8).wrapping_add(item.difficulty as u64));
    (0..count)
        .map(|v| {
            let base = -100.0 + 200.0 * (v as f64 + 0.5) / count as f64;
            let az = (base + rng.gen_range(-8.0..8.0)) * PI / 180.0;
            let el = rng.gen_range(15.0..35.0) * PI / 180.0;
            let dist = rng.gen_range(0.4..0.6);
            let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            CameraView {
                id: format!("view{v}"),
                pose: look_at(&(target + dir * dist), &target),
            }
        })
        .collect()
}

/// A surface sample with its outward normal.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub normal: Vec3,
}

/// Area-weighted samples on the union surface of the capsule chain.
pub fn sample_surface(item: &SupportItem, min_count: usize, rng: &mut impl Rng) -> Vec<SurfaceSample> {
    let segs: Vec<(Vec3, Vec3, f64)> = item.segments().collect();
    let mut areas: Vec<f64> = segs
        .iter()
        .map(|(a, b, r)| 2.0 * PI * r * (b - a).norm())
        .collect();
    // joint spheres (caps at both ends and elbows)
    let joint_r: Vec<f64> = (0..item.centerline.len())
        .map(|i| {
            let l = if i > 0 { item.radii[i - 1] } else { 0.0 };
            let r = item.radii.get(i).copied().unwrap_or(0.0);
            l.max(r)
        })
        .collect();
    areas.extend(joint_r.iter().map(|r| 4.0 * PI * r * r));
    let total: f64 = areas.iter().sum();

    let mut out = Vec::with_capacity(min_count + min_count / 4);
    let mut budget = (min_count as f64 * 1.3) as usize;
    while out.len() < min_count {
        for (k, area) in areas.iter().enumerate() {
            let n = ((area / total) * budget as f64).ceil() as usize;
            for _ in 0..n {
                let s = if k < segs.len() {
                    let (a, b, r) = segs[k];
                    let axis = b - a;
                    let u = perpendicular(&axis);
                    let v = axis.normalize().cross(&u);
                    let t: f64 = rng.gen();
                    let th: f64 = rng.gen_range(0.0..2.0 * PI);
                    let n = u * th.cos() + v * th.sin();
                    SurfaceSample {
                        point: a + axis * t + n * r,
                        normal: n,
                    }
                } else {
                    let j = k - segs.len();
                    let z: f64 = rng.gen_range(-1.0..1.0);
                    let ph: f64 = rng.gen_range(0.0..2.0 * PI);
                    let s = (1.0 - z * z).sqrt();
                    let n = Vec3::new(s * ph.cos(), s * ph.sin(), z);
                    SurfaceSample {
                        point: item.centerline[j] + n * joint_r[j],
                        normal: n,
                    }
                };
                // keep only samples on the outer surface of the union
                if item.signed_distance(&s.point) >= -1e-9 {
                    out.push(s);
                }
            }
        }
        budget = budget * 3 / 2;
        if out.len() < min_count {
            out.clear();
        }
    }
    out
}

/// Indices of samples that survive the camera z-buffer.
pub fn visible_samples(samples: &[SurfaceSample], camera: &Pose, target_depth: f64) -> Vec<usize> {
    let inv = camera.inverse();
    let mut cam_pts = Vec::with_capacity(samples.len());
    let mut cells: HashMap<(i64, i64), f64> = HashMap::new();
    for s in samples {
        let c = inv.transform_point(&s.point);
        // back faces are never visible
        if c.z <= 1e-6 || s.normal.dot(&(camera.translation - s.point)) <= 0.0 {
            cam_pts.push(None);
            continue;
        }
        let u = c.x / c.z * target_depth;
        let v = c.y / c.z * target_depth;
        let key = ((u / ZBUFFER_CELL).floor() as i64, (v / ZBUFFER_CELL).floor() as i64);
        let e = cells.entry(key).or_insert(f64::INFINITY);
        if c.z < *e {
            *e = c.z;
        }
        cam_pts.push(Some((key, c.z)));
    }
    cam_pts
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let (key, z) = (*c)?;
            (z <= cells[&key] + DEPTH_BAND).then_some(i)
        })
        .collect()
}

/// Captures a partial cloud of `n_out` points; `jitter_sigma` adds isotropic
/// Gaussian noise (0 disables it).
pub fn capture_partial_cloud(
    item: &SupportItem,
    view: &CameraView,
    n_out: usize,
    jitter_sigma: f64,
    seed: u64,
) -> Result<PointCloud, CaptureError> {
    let target = item.centroid();
    let dist = (view.pose.translation - target).norm();
    if !(0.3..=1.0).contains(&dist) {
        return Err(CaptureError::CameraDistance(dist));
    }
    let mut rng = rng::stream(
        seed,
        &format!("capture-{}", view.id),
        item.seed.wrapping_mul(8).wrapping_add(item.difficulty as u64),
    );
    let samples = sample_surface(item, MIN_CANDIDATES, &mut rng);
    let visible = visible_samples(&samples, &view.pose, dist);
    if visible.is_empty() {
        return Err(CaptureError::EmptyView);
    }
    let pts: Vec<Vec3> = visible.iter().map(|&i| samples[i].point).collect();
    let picked = farthest_point_sample(&pts, n_out)?;
    let mut points: Vec<Vec3> = picked.iter().map(|&i| pts[i]).collect();
    if jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, jitter_sigma).expect("positive sigma");
        for p in &mut points {
            *p += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(PointCloud {
        points,
        source_view: view.id.clone(),
    })
}

/// Outward surface normal of the chain at a surface point.
pub fn surface_normal(item: &SupportItem, p: &Vec3) -> Vec3 {
    let mut best = (f64::INFINITY, Vec3::z());
    for (a, b, r) in item.segments() {
        let t = segment_param(p, &a, &b);
        let c = a + (b - a) * t;
        let d = p - c;
        let sd = d.norm() - r;
        if sd.abs() < best.0 {
            best = (sd.abs(), d.normalize());
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::item::{generate_item, Difficulty};
    use std::collections::HashSet;

    fn l_hook() -> SupportItem {
        SupportItem {
            centerline: vec![Vec3::zeros(), Vec3::new(0.12, 0.0, 0.0), Vec3::new(0.12, 0.0, 0.05)],
            radii: vec![0.005, 0.005],
            anchor: Vec3::new(0.12, 0.0, 0.005),
            difficulty: Difficulty::Easy,
            seed: 0,
        }
    }

    /// First intersection distance of a ray with the chain, by sphere tracing
    /// on the exact signed distance.
    fn ray_hit(item: &SupportItem, origin: &Vec3, dir: &Vec3, max_t: f64) -> f64 {
        let mut t = 0.0;
        for _ in 0..10_000 {
            let d = item.signed_distance(&(origin + dir * t));
            if d < 1e-7 {
                return t;
            }
            t += d;
            if t > max_t {
                break;
            }
        }
        f64::INFINITY
    }

    #[test]
    fn capture_returns_requested_count_on_surface() {
        let item = generate_item(3, Difficulty::Hard);
        let views = camera_views(&item, 6, 0);
        for v in &views {
            let cloud = capture_partial_cloud(&item, v, 1000, 0.0, 0).unwrap();
            assert_eq!(cloud.points.len(), 1000);
            for p in &cloud.points {
                assert!(p.iter().all(|c| c.is_finite()));
                assert!(item.signed_distance(p).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn capture_only_keeps_visible_points() {
        let item = l_hook();
        let target = item.centroid();
        let eye = target - Vec3::y() * 0.5;
        let view = CameraView {
            id: "side".into(),
            pose: look_at(&eye, &target),
        };
        let cloud = capture_partial_cloud(&item, &view, 1000, 0.0, 1).unwrap();
        let slack_angle = 20f64.to_radians();
        for p in &cloud.points {
            let to_cam = (eye - p).normalize();
            let n = surface_normal(&item, p);
            let angle = n.dot(&to_cam).clamp(-1.0, 1.0).acos();
            assert!(angle <= PI / 2.0 + slack_angle, "back-facing point kept: {angle}");
            let dist = (p - eye).norm();
            let hit = ray_hit(&item, &eye, &(p - eye).normalize(), dist + 1.0);
            assert!(hit >= dist - DEPTH_BAND - 1e-6, "occluded point kept");
        }
    }

    fn voxels(points: &[Vec3]) -> HashSet<(i64, i64, i64)> {
        points
            .iter()
            .map(|p| {
                (
                    (p.x / 0.005).floor() as i64,
                    (p.y / 0.005).floor() as i64,
                    (p.z / 0.005).floor() as i64,
                )
            })
            .collect()
    }

    #[test]
    fn opposite_views_see_different_surfaces() {
        let mut item = l_hook();
        item.radii = vec![0.02, 0.02];
        let target = item.centroid();
        let mk = |s: f64, id: &str| CameraView {
            id: id.into(),
            pose: look_at(&(target + Vec3::y() * (0.6 * s)), &target),
        };
        let a = capture_partial_cloud(&item, &mk(1.0, "a"), 1000, 0.0, 0).unwrap();
        let b = capture_partial_cloud(&item, &mk(-1.0, "b"), 1000, 0.0, 0).unwrap();
        let (va, vb) = (voxels(&a.points), voxels(&b.points));
        let inter = va.intersection(&vb).count() as f64;
        let union = va.union(&vb).count() as f64;
        assert!(inter / union < 0.6, "iou {}", inter / union);
    }

    #[test]
    fn capture_is_deterministic() {
        let item = generate_item(8, Difficulty::Normal);
        let v = &camera_views(&item, 3, 5)[1];
        let a = capture_partial_cloud(&item, v, 500, 0.001, 5).unwrap();
        let b = capture_partial_cloud(&item, v, 500, 0.001, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn camera_must_be_in_range() {
        let item = l_hook();
        let target = item.centroid();
        let view = CameraView {
            id: "far".into(),
            pose: look_at(&(target + Vec3::x() * 3.0), &target),
        };
        assert!(matches!(
            capture_partial_cloud(&item, &view, 100, 0.0, 0),
            Err(CaptureError::CameraDistance(_))
        ));
    }

    #[test]
    fn look_at_is_a_proper_rotation() {
        let p = look_at(&Vec3::new(0.3, -0.4, 0.2), &Vec3::zeros());
        assert!(crate::geometry::rotation_deviation(&p.rotation) < 1e-12);
        let f = p.axis(2);
        assert!((f - (-p.translation).normalize()).norm() < 1e-12);
    }
}
