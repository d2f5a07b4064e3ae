//! ASCII PLY export for viewers.

use std::fmt::Write as _;

use crate::Vec3;

/// Points with an optional per-point scalar channel and optional RGB colour.
pub struct PlyPoint {
    pub position: Vec3,
    pub value: Option<f64>,
    pub color: Option<[u8; 3]>,
}

impl PlyPoint {
    pub fn plain(position: Vec3) -> Self {
        PlyPoint {
            position,
            value: None,
            color: None,
        }
    }
}

/// Renders an ASCII PLY document. Channels present on the first point are
/// emitted for every point (missing entries written as zero).
pub fn to_ply(points: &[PlyPoint]) -> String {
    let has_value = points.first().is_some_and(|p| p.value.is_some());
    let has_color = points.first().is_some_and(|p| p.color.is_some());
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if has_value {
        s.push_str("property float value\n");
    }
    if has_color {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    s.push_str("end_header\n");
    for p in points {
        let _ = write!(s, "{:.6} {:.6} {:.6}", p.position.x, p.position.y, p.position.z);
        if has_value {
            let _ = write!(s, " {:.6}", p.value.unwrap_or(0.0));
        }
        if has_color {
            let [r, g, b] = p.color.unwrap_or([0, 0, 0]);
            let _ = write!(s, " {r} {g} {b}");
        }
        s.push('\n');
    }
    s
}

/// Cloud with a scalar channel, e.g. an affordance map.
pub fn cloud_with_values(points: &[Vec3], values: &[f64]) -> String {
    let pts: Vec<PlyPoint> = points
        .iter()
        .zip(values)
        .map(|(p, v)| PlyPoint {
            position: *p,
            value: Some(*v),
            color: None,
        })
        .collect();
    to_ply(&pts)
}

/// Blue-to-red ramp for a value in [0, 1].
pub fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [(255.0 * v).round() as u8, 0, (255.0 * (1.0 - v)).round() as u8]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_counts_and_channels() {
        let s = cloud_with_values(&[Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()], &[0.5, 1.0]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[2], "element vertex 2");
        assert!(lines.contains(&"property float value"));
        assert_eq!(lines.last().unwrap(), &"0.000000 0.000000 0.000000 1.000000");
    }

    #[test]
    fn plain_points_have_three_columns() {
        let s = to_ply(&[PlyPoint::plain(Vec3::new(0.1, 0.2, 0.3))]);
        let last = s.lines().last().unwrap();
        assert_eq!(last.split_whitespace().count(), 3);
    }
}
