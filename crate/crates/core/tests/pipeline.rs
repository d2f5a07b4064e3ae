//! Small end-to-end runs through the library API.

use skt_hang_core::labels::build_template_db;
use skt_hang_core::sctdn::{predict_skt, read_checkpoint, write_checkpoint, ModelConfig};
use skt_hang_core::simcheck::execute_and_judge;
use skt_hang_core::training::dataset::{generate, make_samples, reference_object, split_dataset, DatasetConfig, ItemData};
use skt_hang_core::training::{batch_gradient, train, TrainConfig};
use skt_hang_core::SkTrajectory;

fn smoke() -> (DatasetConfig, Vec<ItemData>) {
    let cfg = DatasetConfig::smoke();
    let data = generate(&cfg).unwrap();
    (cfg, data)
}

#[test]
fn smoke_dataset_is_reproducible_and_consistent() {
    let (cfg, a) = smoke();
    let b = generate(&cfg).unwrap();
    assert_eq!(a.len(), 8);
    let object = reference_object();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.item, y.item);
        assert_eq!(x.gt, y.gt);
        assert_eq!(x.clouds, y.clouds);
        assert_eq!(x.affordance, y.affordance);
        assert_eq!(x.clouds.len(), cfg.views_per_item);
        assert!(x.clouds.iter().all(|c| c.points.len() == cfg.n_points));
        for skt in x.gt.iter().flat_map(|g| g.successful()) {
            assert_eq!(skt.len(), cfg.t);
            assert!(execute_and_judge(skt, &object, &x.item).unwrap().success);
        }
    }
}

#[test]
fn trained_model_round_trips_and_predicts_deterministically() {
    let (_, data) = smoke();
    let keys: Vec<_> = data.iter().map(|d| d.key).collect();
    let split = split_dataset(&keys, (0.5, 0.0, 0.5), 0).unwrap();
    let pick = |ks: &[_]| -> Vec<&ItemData> { data.iter().filter(|d| ks.contains(&d.key) && d.usable()).collect() };
    let (train_items, test_items) = (pick(&split.train), pick(&split.test));
    let db_in: Vec<_> = train_items.iter().map(|d| (d.id(), d.gt.as_ref().unwrap().canonical().map(|s| s.positions()))).collect();
    let db = build_template_db(&db_in, 3, 0).unwrap().db;
    let samples = make_samples(&train_items, &db);

    let mut model = ModelConfig::tiny();
    model.n_points = 256;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 2,
        ..Default::default()
    };
    let out = train(&model, &samples, &[], &cfg, |_| {}).unwrap();
    let again = train(&model, &samples, &[], &cfg, |_| {}).unwrap();
    assert_eq!(out.last, again.last);
    assert_eq!(out.log, again.log);

    let bytes = write_checkpoint(&out.last, serde_json::json!({"epochs": 3}));
    let (restored, _) = read_checkpoint(&bytes).unwrap();
    assert_eq!(write_checkpoint(&restored, serde_json::json!({"epochs": 3})), bytes);
    let batch: Vec<_> = samples.iter().collect();
    let (a, _) = batch_gradient(&out.last, &batch, &cfg.weights).unwrap();
    let (b, _) = batch_gradient(&restored, &batch, &cfg.weights).unwrap();
    assert_eq!(a, b);

    for d in test_items {
        let cloud = &d.clouds[0].points;
        let p = predict_skt(&restored, cloud, &db, &d.item.frame_id()).unwrap();
        let q = predict_skt(&restored, cloud, &db, &d.item.frame_id()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.skt.len(), 10);
        let back = SkTrajectory::from_json(&p.skt.to_json().unwrap()).unwrap();
        assert_eq!(back, p.skt);
    }
}
