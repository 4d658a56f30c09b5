use memtrack_core::filter::{run_baseline, InitConfig};
use memtrack_core::memnet::{self, run_network, Masks, NetworkParams, Sequential, TrainConfig};
use memtrack_core::metrics;
use memtrack_core::models::{ModelConfig, ScenarioConfig};
use memtrack_core::simulator::{generate_dataset, Case};

fn small() -> ScenarioConfig {
    ScenarioConfig { steps: 40, cases: 12, train_cases: 10, seed: 5, ..Default::default() }
}

#[test]
fn dataset_generation_is_seeded() {
    let a = generate_dataset(&small()).unwrap();
    assert_eq!(a, generate_dataset(&small()).unwrap());
    assert_ne!(a, generate_dataset(&ScenarioConfig { seed: 6, ..small() }).unwrap());
    assert_eq!((a.train.len(), a.test.len()), (10, 2));
}

#[test]
fn baseline_scores_are_in_range() {
    let ds = generate_dataset(&small()).unwrap();
    let model = ModelConfig::default().build().unwrap();
    let init = InitConfig::default();
    let runs: Vec<_> = ds.cases.iter().map(|c| run_baseline(&c.frames, &model, &init).unwrap()).collect();
    let truths: Vec<_> = ds.cases.iter().map(|c| &c.truth).collect();
    let r = metrics::evaluate_run(&truths, &runs).unwrap();
    assert!(r.rmse > 0.05 && r.rmse < 3.0, "rmse {}", r.rmse);
    assert!(r.mean_iou > 0.2 && r.mean_iou <= 1.0);
    assert!(r.min_iou <= r.mean_iou && r.max_gwd >= r.mean_gwd);
    assert!((r.rmse * r.rmse - r.mean_squared_error).abs() < 1e-12);
}

#[test]
fn untrained_network_reproduces_the_baseline() {
    let ds = generate_dataset(&small()).unwrap();
    let model = ModelConfig::default().build().unwrap();
    let init = InitConfig::default();
    let train: Vec<&Case> = ds.train_cases().collect();
    let norm = memnet::fit_feature_norm(train.iter().copied(), &model, &init).unwrap();
    for masks in [Masks::default(), Masks { mub: true, jeb: true, jub: true }] {
        let params = NetworkParams::init(8, 1).with_norm(norm.clone()).with_masks(masks);
        for case in &ds.cases {
            let net = run_network(&params, &case.frames, &model, &init).unwrap();
            assert_eq!(net.run, run_baseline(&case.frames, &model, &init).unwrap());
            assert!(net.delta_f_norm.iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn training_lowers_the_training_objective() {
    let ds = generate_dataset(&small()).unwrap();
    let model = ModelConfig::default().build().unwrap();
    let init = InitConfig::default();
    let train: Vec<&Case> = ds.train_cases().collect();
    let norm = memnet::fit_feature_norm(train.iter().copied(), &model, &init).unwrap();
    let template = NetworkParams::init(8, 1).with_norm(norm);
    let cfg = TrainConfig { epochs: 4, folds: 1, memory_dim: 8, batch_size: 4, ..Default::default() };
    let out = memnet::train(&train, &model, &init, &cfg, &template, &Sequential, &mut |_| {}).unwrap();
    assert_eq!(out.history.len(), 4);
    let first = out.history[0].train_loss;
    let last = out.history[3].train_loss;
    assert!(last < first, "train loss {first} -> {last}");
    assert!(out.best_val_loss <= out.folds[0].initial.loss);
    // same inputs, same outcome
    let again = memnet::train(&train, &model, &init, &cfg, &template, &Sequential, &mut |_| {}).unwrap();
    assert_eq!(again, out);
}
