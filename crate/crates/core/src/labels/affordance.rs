//! Ground-truth affordance maps: a contact Gaussian blended with Gaussians
//! around the surface points the trajectory passes close to.

use serde::{Deserialize, Serialize};

use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffordanceParams {
    /// Gaussian variance in m².
    pub sigma_sq: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Waypoints farther than this from the cloud do not contribute.
    pub gate: f64,
}

impl Default for AffordanceParams {
    fn default() -> Self {
        AffordanceParams {
            sigma_sq: 5e-5,
            alpha: 0.5,
            beta: 0.5,
            gate: 0.02,
        }
    }
}

impl AffordanceParams {
    /// Same weights with the width given as a standard deviation.
    pub fn with_sigma(sigma: f64) -> Self {
        AffordanceParams {
            sigma_sq: sigma * sigma,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceMap {
    pub values: Vec<f64>,
    pub contact_index: usize,
    /// No waypoint passed within the gate; the map is the contact term only.
    pub contact_only: bool,
}

/// Index of the point nearest `q`; ties go to the lowest index.
pub fn nearest_index(points: &[Vec3], q: &Vec3) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// First index of the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn affordance_gt(cloud: &[Vec3], contact: &Vec3, waypoints: &[Vec3], params: &AffordanceParams) -> AffordanceMap {
    assert!(!cloud.is_empty(), "empty cloud");
    let two_s2 = 2.0 * params.sigma_sq;
    let pc = cloud[nearest_index(cloud, contact)];
    let centres: Vec<Vec3> = waypoints
        .iter()
        .filter_map(|w| {
            let q = cloud[nearest_index(cloud, w)];
            ((w - q).norm() < params.gate).then_some(q)
        })
        .collect();
    let mut values: Vec<f64> = cloud
        .iter()
        .map(|x| {
            let cp = (-(x - pc).norm_squared() / two_s2).exp();
            let seg = centres
                .iter()
                .map(|q| (-(x - q).norm_squared() / two_s2).exp())
                .fold(0.0, f64::max);
            params.alpha * cp + params.beta * seg
        })
        .collect();
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    AffordanceMap {
        contact_index: argmax(&values),
        values,
        contact_only: centres.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contact_point_gets_one() {
        let cloud: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 0.002, 0.0, 0.0)).collect();
        let contact = cloud[20];
        let wps = vec![contact + Vec3::new(0.0, 0.0, 0.001), Vec3::new(1.0, 1.0, 1.0)];
        let m = affordance_gt(&cloud, &contact, &wps, &AffordanceParams::default());
        assert_eq!(m.contact_index, 20);
        assert_eq!(m.values[20], 1.0);
        assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(!m.contact_only);
    }

    #[test]
    fn far_points_vanish() {
        let p = AffordanceParams::default();
        let sigma = p.sigma_sq.sqrt();
        let cloud = vec![Vec3::zeros(), Vec3::new(10.0 * sigma, 0.0, 0.0)];
        let m = affordance_gt(&cloud, &Vec3::zeros(), &[], &p);
        assert!(m.values[1] < 1e-9);
        assert!(m.contact_only);
    }

    #[test]
    fn sigma_switch() {
        assert!((AffordanceParams::with_sigma(0.005).sigma_sq - 2.5e-5).abs() < 1e-18);
    }
}
