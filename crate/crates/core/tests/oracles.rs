//! Library results checked against brute-force reference computations.

use std::f64::consts::PI;

use nalgebra::UnitQuaternion;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skt_hang_core::geometry::make_rotation;
use skt_hang_core::labels::{affordance_gt, build_template_db, kmeans, pca_fit, AffordanceParams};
use skt_hang_core::scenegen::{generate_item, generate_object, Category, Difficulty, HangObject, SupportItem};
use skt_hang_core::simcheck::{clearance, linked};
use skt_hang_core::{Gravity, Mat3, Pose, Vec3};

/// Parity of centreline crossings through the ring disc, each segment
/// intersected with the disc plane by solving a 3x3 system.
fn linked_oracle(pose: &Pose, object: &HangObject, item: &SupportItem) -> bool {
    let placed = object.place(pose);
    let mut crossings = 0;
    for w in item.centerline.windows(2) {
        let d = w[1] - w[0];
        let m = Mat3::from_columns(&[d, -placed.ring_u, -placed.ring_v]);
        let Some(inv) = m.try_inverse() else { continue };
        let sol = inv * (placed.ring_center - w[0]);
        let (s, x, y) = (sol[0], sol[1], sol[2]);
        if (0.0..1.0).contains(&s) && x * x + y * y < placed.ring_radius * placed.ring_radius {
            crossings += 1;
        }
    }
    crossings % 2 == 1
}

/// Random keypoint pose whose ring centre lies within 1.5 ring radii of a
/// random centreline point.
fn random_pose(rng: &mut impl Rng, object: &HangObject, item: &SupportItem) -> Pose {
    let seg = rng.gen_range(0..item.centerline.len() - 1);
    let (a, b) = (item.centerline[seg], item.centerline[seg + 1]);
    let on_axis = a + (b - a) * rng.gen::<f64>();
    let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let target = on_axis + dir * (1.5 * object.ring_radius);
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ));
    let rotation = q.to_rotation_matrix().into_inner();
    let origin = object.place(&Pose { rotation, translation: Vec3::zeros() }).ring_center;
    Pose {
        rotation,
        translation: target - origin,
    }
}

#[test]
fn linked_matches_segment_disc_oracle() {
    let objects = [generate_object(0, Category::Reference), generate_object(5, Category::Mug)];
    for d in Difficulty::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + d as u64);
        let (mut agree, mut positives) = (0, 0);
        for i in 0..400 {
            let item = generate_item(i / 40, d);
            let o = &objects[(i % 2) as usize];
            let pose = random_pose(&mut rng, o, &item);
            let expect = linked_oracle(&pose, o, &item);
            positives += usize::from(expect);
            agree += usize::from(linked(&pose, o, &item) == expect);
        }
        assert_eq!(agree, 400, "{d:?}");
        assert!(positives > 20 && positives < 380, "{d:?}: {positives} linked poses is too lopsided");
    }
}

fn rod(z: f64, r: f64) -> SupportItem {
    SupportItem {
        centerline: vec![Vec3::new(0.0, 0.0, z), Vec3::new(0.2, 0.0, z)],
        radii: vec![r],
        anchor: Vec3::new(0.1, 0.0, z + r),
        difficulty: Difficulty::Easy,
        seed: 0,
    }
}

fn ring_facing_x(o: &HangObject, centre: Vec3) -> Pose {
    let rotation = make_rotation(&-Vec3::x(), &Gravity::down()).unwrap();
    let origin = o.place(&Pose { rotation, translation: Vec3::zeros() }).ring_center;
    Pose {
        rotation,
        translation: centre - origin,
    }
}

#[test]
fn clearance_matches_capsule_distances() {
    let o = generate_object(0, Category::Reference);
    let (big_r, tube) = (o.ring_radius, o.tube_radius);
    for (z, r) in [(0.1, 0.005), (0.0, 0.003), (0.25, 0.0045)] {
        let item = rod(z, r);
        // rod along the ring axis: every ring point is R from the centreline
        let c = clearance(&ring_facing_x(&o, Vec3::new(0.1, 0.0, z)), &o, &item);
        assert!((c - (big_r - r - tube)).abs() < 1e-6, "{c}");
        // ring far to the side: its nearest sample faces the rod
        let c = clearance(&ring_facing_x(&o, Vec3::new(0.1, 1.0, z)), &o, &item);
        assert!((c - (1.0 - big_r - r - tube)).abs() < 1e-6, "{c}");
        // ring plane containing the rod axis
        let rotation = make_rotation(&Vec3::y(), &Gravity::down()).unwrap();
        let origin = o.place(&Pose { rotation, translation: Vec3::zeros() }).ring_center;
        let pose = Pose {
            rotation,
            translation: Vec3::new(0.1, 0.0, z) - origin,
        };
        let c = clearance(&pose, &o, &item);
        assert!((c + r + tube).abs() < 1e-6, "{c}");
    }
}

fn nearest_brute(cloud: &[Vec3], q: &Vec3) -> Vec3 {
    let mut best = cloud[0];
    for p in cloud {
        if (p - q).norm() < (best - q).norm() {
            best = *p;
        }
    }
    best
}

fn affordance_oracle(cloud: &[Vec3], contact: &Vec3, waypoints: &[Vec3], p: &AffordanceParams) -> Vec<f64> {
    let g = |x: &Vec3, c: &Vec3| (-(x - c).norm_squared() / (2.0 * p.sigma_sq)).exp();
    let pc = nearest_brute(cloud, contact);
    let mut centres = vec![];
    for w in waypoints {
        let q = nearest_brute(cloud, w);
        if (w - q).norm() < p.gate {
            centres.push(q);
        }
    }
    let raw: Vec<f64> = cloud
        .iter()
        .map(|x| {
            let mut seg: f64 = 0.0;
            for c in &centres {
                seg = seg.max(g(x, c));
            }
            p.alpha * g(x, &pc) + p.beta * seg
        })
        .collect();
    let m = raw.iter().cloned().fold(0.0, f64::max);
    raw.iter().map(|v| v / m).collect()
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (-0.05..0.05f64, -0.05..0.05f64, -0.05..0.05f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affordance_matches_gaussian_mixture(
        cloud in prop::collection::vec(vec3(), 20..120),
        contact in vec3(),
        waypoints in prop::collection::vec(vec3(), 0..12),
        sigma in 0.004..0.02f64,
    ) {
        let p = AffordanceParams::with_sigma(sigma);
        let m = affordance_gt(&cloud, &contact, &waypoints, &p);
        let o = affordance_oracle(&cloud, &contact, &waypoints, &p);
        for (a, b) in m.values.iter().zip(&o) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn kmeans_labels_are_nearest_centroids(seed in 0u64..1000, k in 1usize..6, n in 10usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let km = kmeans(&pts, k, seed);
        for (p, &l) in pts.iter().zip(&km.labels) {
            let d = |c: &Vec<f64>| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            let best = (0..km.centroids.len()).min_by(|&a, &b| d(&km.centroids[a]).total_cmp(&d(&km.centroids[b]))).unwrap();
            prop_assert!(d(&km.centroids[l]) <= d(&km.centroids[best]));
        }
    }

    #[test]
    fn pca_basis_is_orthonormal(seed in 0u64..1000, dim in 3usize..40, n in 3usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let pca = pca_fit(&data, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let dot: f64 = pca.basis[i].iter().zip(&pca.basis[j]).map(|(a, b)| a * b).sum();
                prop_assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-9);
            }
        }
    }
}

/// Planar trajectory of length `t` bending by `bend` radians.
fn arc(t: usize, bend: f64, scale: f64) -> Vec<Vec3> {
    (0..t)
        .map(|i| {
            let a = bend * i as f64 / t as f64;
            Vec3::new(a.sin(), 0.0, 1.0 - a.cos()) * scale + Vec3::new(0.0, 0.0, i as f64 * 0.001)
        })
        .collect()
}

#[test]
fn templates_label_themselves() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let items: Vec<(String, Option<Vec<Vec3>>)> = (0..60)
        .map(|i| {
            let bend = (i % 5) as f64 * PI / 6.0 + rng.gen_range(-0.05..0.05);
            (format!("item-{i}"), Some(arc(20, bend, 0.1)))
        })
        .collect();
    let out = build_template_db(&items, 5, 3).unwrap();
    for (c, t) in out.db.templates.iter().enumerate() {
        assert_eq!(out.db.label_of(t), c);
    }
}
