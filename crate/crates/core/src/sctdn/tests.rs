use ndarray::{arr1, arr2, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

use super::encoder::{ball_query, encode, fps_invariant, three_nn, EncoderParams};
use super::gradcheck::{self, jittered_params, Problem};
use super::layers::{Dense, Mlp};
use super::model::*;
use super::*;
use crate::labels::TemplateDb;
use crate::{rng, Vec3};

fn small_config() -> ModelConfig {
    ModelConfig {
        n_points: 32,
        t: 4,
        k: 3,
        sa1: SetAbstraction {
            centroids: 16,
            radius: 0.5,
            max_neighbors: 6,
            mlp: vec![8],
        },
        sa2: SetAbstraction {
            centroids: 4,
            radius: 0.9,
            max_neighbors: 6,
            mlp: vec![8],
        },
        global_mlp: vec![8],
        fp2_mlp: vec![8],
        fp1_mlp: vec![8],
        cls_hidden: 8,
        waypoint_mlp: vec![8, 4],
        lstm_hidden: 4,
        lstm_layers: 2,
        affordance_threshold: 0.1,
        separate_encoders: false,
    }
}

fn random_cloud(n: usize, seed: u64) -> Vec<Vec3> {
    let mut r = rng::stream(seed, "sctdn-cloud", 0);
    (0..n)
        .map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-0.5..0.5)))
        .collect()
}

// ---- independent loop-based oracle ----

fn mlp_row(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in &mlp.layers {
        let mut y = vec![0.0; l.w.ncols()];
        for (o, yo) in y.iter_mut().enumerate() {
            let mut acc = l.b[o];
            for (i, hi) in h.iter().enumerate() {
                acc += hi * l.w[[i, o]];
            }
            *yo = acc.max(0.0);
        }
        h = y;
    }
    h
}

fn colmax(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = rows[0].clone();
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            if b > a {
                *a = *b;
            }
        }
    }
    m
}

fn oracle_encoder(cfg: &ModelConfig, p: &EncoderParams, pts: &[Vec3]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let c1 = fps_invariant(pts, cfg.sa1.centroids);
    let p1: Vec<Vec3> = c1.iter().map(|&i| pts[i]).collect();
    let g1 = ball_query(pts, &p1, cfg.sa1.radius, cfg.sa1.max_neighbors);
    let f1: Vec<Vec<f64>> = (0..p1.len())
        .map(|k| {
            let rows: Vec<Vec<f64>> = g1
                .range(k)
                .map(|r| {
                    let d = pts[g1.members[r]] - p1[k];
                    mlp_row(&p.sa1, &[d.x, d.y, d.z])
                })
                .collect();
            colmax(&rows)
        })
        .collect();
    let c2 = fps_invariant(&p1, cfg.sa2.centroids);
    let p2: Vec<Vec3> = c2.iter().map(|&i| p1[i]).collect();
    let g2 = ball_query(&p1, &p2, cfg.sa2.radius, cfg.sa2.max_neighbors);
    let f2: Vec<Vec<f64>> = (0..p2.len())
        .map(|k| {
            let rows: Vec<Vec<f64>> = g2
                .range(k)
                .map(|r| {
                    let m = g2.members[r];
                    let d = p1[m] - p2[k];
                    let mut x = vec![d.x, d.y, d.z];
                    x.extend(&f1[m]);
                    mlp_row(&p.sa2, &x)
                })
                .collect();
            colmax(&rows)
        })
        .collect();
    let grows: Vec<Vec<f64>> = p2
        .iter()
        .zip(&f2)
        .map(|(q, f)| {
            let mut x = vec![q.x, q.y, q.z];
            x.extend(f);
            mlp_row(&p.global, &x)
        })
        .collect();
    let global = colmax(&grows);
    let i2 = three_nn(&p2, &p1);
    let q1: Vec<Vec<f64>> = (0..p1.len())
        .map(|i| {
            let mut up = vec![0.0; f2[0].len()];
            for &(j, w) in &i2.neighbors[i] {
                for (u, v) in up.iter_mut().zip(&f2[j]) {
                    *u += w * v;
                }
            }
            up.extend(&global);
            up.extend(&f1[i]);
            mlp_row(&p.fp2, &up)
        })
        .collect();
    let i1 = three_nn(&p1, pts);
    let feats = (0..pts.len())
        .map(|i| {
            let mut up = vec![0.0; q1[0].len()];
            for &(j, w) in &i1.neighbors[i] {
                for (u, v) in up.iter_mut().zip(&q1[j]) {
                    *u += w * v;
                }
            }
            up.extend([pts[i].x, pts[i].y, pts[i].z]);
            mlp_row(&p.fp1, &up)
        })
        .collect();
    (feats, global)
}

#[test]
fn encoder_matches_loop_oracle() {
    let cfg = small_config();
    let params = jittered_params(&cfg, 4);
    let pts = random_cloud(32, 4);
    let tr = encode(&cfg, &params.encoder, &pts, true);
    let (feats, global) = oracle_encoder(&cfg, &params.encoder, &pts);
    let f = tr.features.as_ref().unwrap();
    for (i, row) in feats.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((f[[i, j]] - v).abs() < 1e-9);
        }
    }
    for (a, b) in tr.global.iter().zip(&global) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(global.iter().any(|v| *v > 0.0), "oracle must exercise nonzero paths");
}

#[test]
fn encoder_is_permutation_symmetric() {
    let cfg = ModelConfig::tiny();
    let params = jittered_params(&cfg, 2);
    let pts = random_cloud(cfg.n_points, 2);
    let mut perm: Vec<usize> = (0..pts.len()).collect();
    let mut r = rng::stream(2, "perm", 0);
    for i in (1..perm.len()).rev() {
        perm.swap(i, r.gen_range(0..=i));
    }
    let shuffled: Vec<Vec3> = perm.iter().map(|&i| pts[i]).collect();
    let a = encode(&cfg, &params.encoder, &pts, true);
    let b = encode(&cfg, &params.encoder, &shuffled, true);
    for (x, y) in a.global.iter().zip(b.global.iter()) {
        assert!((x - y).abs() < 1e-9);
    }
    let (fa, fb) = (a.features.unwrap(), b.features.unwrap());
    for (k, &i) in perm.iter().enumerate() {
        for c in 0..fa.ncols() {
            assert!((fa[[i, c]] - fb[[k, c]]).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_parameters_give_zero_features() {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::zeros(&cfg);
    let tr = encode(&cfg, &params.encoder, &random_cloud(64, 1), true);
    assert!(tr.features.unwrap().iter().all(|v| *v == 0.0));
    assert!(tr.global.iter().all(|v| *v == 0.0));
}

#[test]
fn classifier_cases() {
    let cfg = ModelConfig::tiny();
    let p = ModelParams::zeros(&cfg);
    let (_, logits) = classify(&p, &Array1::ones(cfg.global_dim()));
    assert!(logits.iter().all(|v| *v == 0.0));
    assert_eq!(argmax(logits.as_slice().unwrap()), 0);
    let (l, _) = cross_entropy(&Array1::zeros(5), 3);
    assert!((l - 5f64.ln()).abs() < 1e-12);

    // hand-built 3×3: identity hidden layer, permutation output layer
    let mut cfg3 = cfg.clone();
    cfg3.global_mlp = vec![3];
    cfg3.cls_hidden = 3;
    cfg3.k = 3;
    let mut p3 = ModelParams::zeros(&cfg3);
    p3.cls_hidden = Dense {
        w: Array2::eye(3),
        b: Array1::zeros(3),
    };
    p3.cls_out = Dense {
        w: arr2(&[[0.0, 0.0, 2.0], [1.0, 0.0, 0.0], [0.0, 3.0, 0.0]]),
        b: arr1(&[0.0, 0.0, 0.5]),
    };
    let (_, logits) = classify(&p3, &arr1(&[1.0, 0.0, 0.0]));
    assert_eq!(logits.to_vec(), vec![0.0, 0.0, 2.5]);
    let (_, logits) = classify(&p3, &arr1(&[0.0, 0.0, 1.0]));
    assert_eq!(logits.to_vec(), vec![0.0, 3.0, 0.5]);
    assert_eq!(argmax(logits.as_slice().unwrap()), 1);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = arr1(&[0.3, -1.2, 2.0, 0.0]);
    let (_, g) = cross_entropy(&logits, 1);
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    for i in 0..4 {
        let expect = logits[i].exp() / z - if i == 1 { 1.0 } else { 0.0 };
        assert!((g[i] - expect).abs() < 1e-15);
    }
}

#[test]
fn affordance_head_cases() {
    let mut cfg = ModelConfig::tiny();
    let p = ModelParams::zeros(&cfg);
    let feats = Array2::from_elem((7, cfg.feature_dim()), 0.3);
    assert!(affordance_head(&p, &feats).iter().all(|v| *v == 0.5));

    cfg.fp1_mlp = vec![3];
    let mut p = ModelParams::zeros(&cfg);
    p.affordance = Dense {
        w: arr2(&[[1.0], [-2.0], [0.5]]),
        b: arr1(&[0.1]),
    };
    let feats = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 2.0], [-1.0, 0.5, 0.0]]);
    let a = affordance_head(&p, &feats);
    let hand = [1.1f64, -1.9, 0.1, -1.9];
    for (v, z) in a.iter().zip(hand) {
        assert!((v - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
    }
    // saturation under scaling
    p.affordance.w *= 1e4;
    p.affordance.b *= 1e4;
    let a = affordance_head(&p, &feats);
    assert!(a[0] > 1.0 - 1e-12 && a[1] < 1e-12);
}

#[test]
fn shape_conditioned_feature_cases() {
    let f = arr2(&[[1.0, 5.0], [3.0, 2.0], [2.0, 4.0]]);
    let c = shape_conditioned_feature(&f, &[0.05, 0.5, 0.0], 0.1);
    assert_eq!(c.feature.to_vec(), vec![3.0, 2.0]);
    assert!(!c.fallback);
    let c = shape_conditioned_feature(&f, &[0.9, 0.5, 0.2], 0.1);
    assert_eq!(c.feature.to_vec(), vec![3.0, 5.0]);
    let c = shape_conditioned_feature(&f, &[0.05, 0.01, 0.09], 0.1);
    assert!(c.fallback);
    assert_eq!(c.feature.to_vec(), vec![2.0, 4.0]);
}

#[test]
fn align_template_cases() {
    let t = vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.1), Vec3::new(0.3, 0.1, 0.1)];
    assert_eq!(align_template(&t, &t[0]), t);
    let shifted = align_template(&t, &(t[0] + Vec3::new(0.1, 0.0, 0.0)));
    for (a, b) in shifted.iter().zip(&t) {
        assert!((a - b - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    }
}

proptest! {
    #[test]
    fn alignment_preserves_differences(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..12),
        c in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
    ) {
        let t: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p.0, p.1, p.2)).collect();
        let contact = Vec3::new(c.0, c.1, c.2);
        let a = align_template(&t, &contact);
        prop_assert_eq!(a[0], contact);
        for i in 1..t.len() {
            prop_assert!(((a[i] - a[i - 1]) - (t[i] - t[i - 1])).norm() < 1e-12);
        }
    }
}

#[test]
fn zero_network_does_not_deform() {
    let cfg = ModelConfig::tiny();
    let p = ModelParams::zeros(&cfg);
    let aligned: Vec<Vec3> = (0..cfg.t).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
    let d = deform(&p, &aligned, &Array1::ones(cfg.feature_dim()));
    assert!(d.offsets.iter().all(|v| *v == 0.0));
}

#[test]
fn deformation_sees_absolute_positions() {
    let cfg = ModelConfig::tiny();
    let p = jittered_params(&cfg, 6);
    let a: Vec<Vec3> = (0..cfg.t).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.2)).collect();
    let b: Vec<Vec3> = a.iter().map(|q| q + Vec3::new(0.3, -0.2, 0.1)).collect();
    let f = Array1::from_elem(cfg.feature_dim(), 0.2);
    let (da, db) = (deform(&p, &a, &f), deform(&p, &b, &f));
    let diff: f64 = (&da.offsets - &db.offsets).iter().map(|v| v.abs()).sum();
    assert!(diff > 1e-6, "offsets should change under translation");
}

fn straight_db(cfg: &ModelConfig) -> TemplateDb {
    let templates: Vec<Vec<Vec3>> = (0..cfg.k)
        .map(|k| (0..cfg.t).map(|i| Vec3::new(0.02 * i as f64, 0.0, 0.01 * (k as f64 + 1.0) * i as f64)).collect())
        .collect();
    TemplateDb {
        version: 1,
        k: cfg.k,
        t: cfg.t,
        pca_mean: vec![0.0; 3 * cfg.t],
        pca_basis: vec![vec![0.0; 3 * cfg.t]; 2],
        rank_deficient: false,
        centroids: vec![vec![0.0, 0.0]; cfg.k],
        templates,
        template_items: (0..cfg.k).map(|k| format!("item-{k}")).collect(),
        template_embeddings: vec![vec![0.0, 0.0]; cfg.k],
    }
}

#[test]
fn zero_params_predict_aligned_template_zero() {
    let cfg = ModelConfig::tiny();
    let p = ModelParams::zeros(&cfg);
    let db = straight_db(&cfg);
    let cloud: Vec<Vec3> = random_cloud(64, 8).iter().map(|q| q * 0.1).collect();
    let pred = predict_skt(&p, &cloud, &db, "item").unwrap();
    assert_eq!(pred.class, 0);
    assert_eq!(pred.contact_index, 0);
    let expect = align_template(&db.templates[0], &cloud[0]);
    assert_eq!(pred.skt.positions(), expect);
    assert!(!pred.skt.positions_only);
    assert_eq!(pred.skt.len(), cfg.t);
}

#[test]
fn prediction_contract_and_permutation_invariance() {
    let cfg = ModelConfig::tiny();
    let p = jittered_params(&cfg, 12);
    let db = straight_db(&cfg);
    let cloud: Vec<Vec3> = random_cloud(64, 12).iter().map(|q| q * 0.1 + Vec3::new(0.1, 0.0, 0.0)).collect();
    let a = predict_skt(&p, &cloud, &db, "item").unwrap();
    assert_eq!(a.skt.waypoints[0].translation, a.contact + a.offsets[0]);
    let mut rev = cloud.clone();
    rev.reverse();
    let b = predict_skt(&p, &rev, &db, "item").unwrap();
    assert_eq!(a.class, b.class);
    assert_eq!(a.contact, b.contact);
    for (x, y) in a.skt.positions().iter().zip(b.skt.positions()) {
        assert!((x - y).norm() < 1e-9);
    }
    for (i, v) in a.affordance.iter().enumerate() {
        assert!((v - b.affordance[63 - i]).abs() < 1e-12);
    }
    // bit-identical on rerun
    assert_eq!(a, predict_skt(&p, &cloud, &db, "item").unwrap());
    // template-only path is exactly the aligned template
    let z = predict_with(&p, &cloud, &db, "item", PredictOptions { zero_offsets: true, ..Default::default() }).unwrap();
    assert_eq!(z.skt.positions(), align_template(&db.templates[z.class], &z.contact));
}

#[test]
fn too_few_points_is_an_error() {
    let cfg = ModelConfig::tiny();
    let p = ModelParams::zeros(&cfg);
    let db = straight_db(&cfg);
    assert!(matches!(
        predict_skt(&p, &random_cloud(63, 1), &db, "x"),
        Err(SctdnError::TooFewPoints(63))
    ));
}

// ---- losses ----

fn independent_loss(logits: &[f64], class: usize, a: &[f64], ga: &[f64], o: &[f64], go: &[f64]) -> f64 {
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    let ce = -(logits[class].exp() / z).ln();
    let la: f64 = a.iter().zip(ga).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    let lt: f64 = o.iter().zip(go).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / o.len() as f64;
    lt + 0.1 * la + 0.1 * ce
}

#[test]
fn loss_matches_independent_formula() {
    let cfg = ModelConfig::tiny();
    let p = jittered_params(&cfg, 3);
    let prob = Problem::random(&cfg, 3);
    let tr = forward(&p, &prob.points, &prob.aligned, Some(&prob.affordance)).unwrap();
    let (terms, _) = loss_total(&tr, prob.class, &prob.affordance, &prob.offsets, &LossWeights::default()).unwrap();
    let expect = independent_loss(
        tr.logits().as_slice().unwrap(),
        prob.class,
        tr.affordance().as_slice().unwrap(),
        &prob.affordance,
        &tr.offsets().iter().cloned().collect::<Vec<_>>(),
        &prob.offsets.iter().cloned().collect::<Vec<_>>(),
    );
    assert!((terms.total - expect).abs() < 1e-12);
}

#[test]
fn perfect_predictions_leave_only_classification() {
    let cfg = ModelConfig::tiny();
    let p = ModelParams::zeros(&cfg);
    let prob = Problem::random(&cfg, 5);
    let tr = forward(&p, &prob.points, &prob.aligned, Some(&prob.affordance)).unwrap();
    let aff = tr.affordance().to_vec();
    let off = tr.offsets().clone();
    let (terms, _) = loss_total(&tr, 2, &aff, &off, &LossWeights::default()).unwrap();
    assert_eq!(terms.traj, 0.0);
    assert_eq!(terms.aff, 0.0);
    // zero params give uniform logits over K = 5
    assert!((terms.total - 0.1 * 5f64.ln()).abs() < 1e-12);
    assert!((0.1 * 5f64.ln() - 0.1609).abs() < 1e-4);
}

#[test]
fn shape_mismatch_is_reported() {
    let cfg = ModelConfig::tiny();
    let p = ModelParams::zeros(&cfg);
    let prob = Problem::random(&cfg, 5);
    let tr = forward(&p, &prob.points, &prob.aligned, Some(&prob.affordance)).unwrap();
    let bad = Array2::zeros((cfg.t + 1, 3));
    assert!(matches!(
        loss_total(&tr, 0, &prob.affordance, &bad, &LossWeights::default()),
        Err(SctdnError::ShapeMismatch(_))
    ));
}

// ---- gradients ----

#[test]
fn zero_seed_gives_zero_gradients() {
    let cfg = ModelConfig::tiny();
    let p = jittered_params(&cfg, 1);
    let prob = Problem::random(&cfg, 1);
    let tr = forward(&p, &prob.points, &prob.aligned, Some(&prob.affordance)).unwrap();
    let (_, seed) = loss_total(&tr, prob.class, &prob.affordance, &prob.offsets, &LossWeights::default()).unwrap();
    let g = backward(&p, &tr, &seed.scaled(0.0));
    assert!(g.manifest().iter().all(|t| t.data.iter().all(|v| *v == 0.0)));
}

#[test]
fn finite_differences_agree_for_every_tensor() {
    let reports = gradcheck::check(&ModelConfig::tiny(), 7, 6);
    assert!(reports.len() > 30);
    for r in &reports {
        assert!(r.max_relative_error < 1e-4, "{}: {:e}", r.name, r.max_relative_error);
    }
}

#[test]
fn finite_differences_agree_with_separate_encoders() {
    let mut cfg = ModelConfig::tiny();
    cfg.separate_encoders = true;
    let reports = gradcheck::check(&cfg, 8, 3);
    assert!(reports.iter().any(|r| r.name.starts_with("cls_encoder")));
    for r in &reports {
        assert!(r.max_relative_error < 1e-4, "{}: {:e}", r.name, r.max_relative_error);
    }
}
