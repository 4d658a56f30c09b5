use super::*;
use crate::filter::run_baseline;
use crate::models::{ModelConfig, ScenarioConfig};
use crate::simulator::generate_case;
use core::f64::consts::E;

fn model() -> NominalModel {
    ModelConfig::default().build().unwrap()
}

fn case(steps: usize, seed: u64) -> Case {
    let cfg = ScenarioConfig { steps, seed, ..ScenarioConfig::default() };
    generate_case(&cfg, 0).unwrap()
}

fn normed(h: usize, seed: u64) -> NetworkParams {
    let c = case(30, 100 + seed);
    let norm = fit_feature_norm([&c], &model(), &InitConfig::default()).unwrap();
    NetworkParams::init(h, seed).with_norm(norm)
}

fn with_ext(param: Mat) -> (TrackState, ExtensionState) {
    (TrackState::new([1.0, 2.0, 3.0, 4.0], Mat::identity(4)), ExtensionState { dof: 7.0, param })
}

#[test]
fn log_cholesky_encoding() {
    let mut e = Eval;
    let (s, x) = with_ext(Mat::identity(2));
    let f = belief_features(&mut e, &s, &x).unwrap();
    assert_eq!(&f.data()[8..11], &[0.0, 0.0, 0.0]);
    let (s, x) = with_ext(Mat::diag(&[E * E, E.powi(4)]));
    let f = belief_features(&mut e, &s, &x).unwrap();
    assert!((f.data()[8] - 1.0).abs() < 1e-12 && (f.data()[9] - 2.0).abs() < 1e-12 && f.data()[10] == 0.0);
    assert_eq!(f.data()[11], libm::log(7.0));
    assert_eq!(f.shape(), (BELIEF_FEATURES, 1));
}

#[test]
fn single_point_frame_encodes_finite() {
    let mut e = Eval;
    let (s, x) = with_ext(Mat::identity(2));
    let fs = FrameStats { mean: Mat::col(&[1.5, 2.0]), scatter: Mat::zeros(2, 2), count: 1 };
    let f = encode_inputs(&mut e, &s, &x, &fs, &FeatureNorm::default()).unwrap();
    assert_eq!(f.shape(), (FEATURE_DIM, 1));
    assert!(f.is_finite());
    assert_eq!(&f.data()[12..14], &[0.5, 0.0]);
    assert_eq!(f.data()[17], 0.0);
}

#[test]
fn lstm_zero_parameter_identities() {
    let mut e = Eval;
    let p = NetworkParams::zeros(3);
    let net = Net::bind(&mut e, &p);
    let feats = Mat::col(&[0.7; FEATURE_DIM]);
    let m0 = MemoryState::zeros(&mut e, 3);
    let m1 = mub_step(&mut e, &net, &feats, &m0);
    assert_eq!(m1.cell, Mat::zeros(3, 1));
    assert_eq!(m1.hidden, Mat::zeros(3, 1));

    let c0 = Mat::col(&[1.0, -2.0, 0.5]);
    let m = MemoryState { cell: c0.clone(), hidden: Mat::zeros(3, 1), pc: Mat::zeros(3, 1) };
    let m2 = mub_step(&mut e, &net, &feats, &m);
    assert!(m2.cell.max_abs_diff(&c0.scale(0.5)) < 1e-15);
    assert!(m2.hidden.max_abs_diff(&c0.map(|c| 0.5 * libm::tanh(0.5 * c))) < 1e-15);
    assert!(m2.pc.data().iter().all(|v| *v >= 0.0));
}

#[test]
fn masked_memory_is_frozen() {
    let mut e = Eval;
    let p = NetworkParams::init(4, 1).perturbed(2, 0.5).with_masks(Masks { mub: true, ..Masks::default() });
    let net = Net::bind(&mut e, &p);
    let m = MemoryState { cell: Mat::col(&[1.0; 4]), hidden: Mat::col(&[0.3; 4]), pc: Mat::col(&[2.0; 4]) };
    let out = mub_step(&mut e, &net, &Mat::col(&[1.0; FEATURE_DIM]), &m);
    assert_eq!(out.cell, m.cell);
    assert_eq!(out.hidden, m.hidden);
    assert_eq!(out.pc, Mat::zeros(4, 1));
}

#[test]
fn heads_calibrated_zero_masked_and_psd() {
    let mut e = Eval;
    let mem = MemoryState { cell: Mat::col(&[0.2; 5]), hidden: Mat::col(&[0.4, -0.1, 0.3, 0.9, -0.6]), pc: Mat::col(&[0.1; 5]) };
    let (s, x) = with_ext(Mat::diag(&[20.0, 3.0]));

    let p = NetworkParams::init(5, 3);
    let net = Net::bind(&mut e, &p);
    let (df, pf, pphi) = jeb_heads(&mut e, &net, &mem);
    assert_eq!((df, pf, pphi), (Mat::zeros(4, 1), Mat::zeros(4, 4), Mat::zeros(2, 2)));
    let (dh, ph) = jub_heads(&mut e, &net, &s, &x).unwrap();
    assert_eq!((dh, ph), (Mat::zeros(2, 1), Mat::zeros(2, 2)));

    let random = NetworkParams::init(5, 3).perturbed(9, 1.0);
    let masked = random.clone().with_masks(Masks { mub: false, jeb: true, jub: true });
    let net = Net::bind(&mut e, &masked);
    let (df, pf, pphi) = jeb_heads(&mut e, &net, &mem);
    assert_eq!((df, pf, pphi), (Mat::zeros(4, 1), Mat::zeros(4, 4), Mat::zeros(2, 2)));
    assert_eq!(jub_heads(&mut e, &net, &s, &x).unwrap(), (Mat::zeros(2, 1), Mat::zeros(2, 2)));

    for seed in 0..20 {
        let p = NetworkParams::init(5, seed).perturbed(seed, 1.0);
        let net = Net::bind(&mut e, &p);
        let (_, pf, pphi) = jeb_heads(&mut e, &net, &mem);
        let (_, ph) = jub_heads(&mut e, &net, &s, &x).unwrap();
        for m in [pf, pphi, ph] {
            let (vals, _) = spd::sym_eigen(&m).unwrap();
            assert!(vals[0] >= -1e-12);
            assert_eq!(m, m.transpose());
        }
    }
}

#[test]
fn untrained_network_reproduces_baseline_exactly() {
    let c = case(60, 4);
    let m = model();
    let init = InitConfig::default();
    let base = run_baseline(&c.frames, &m, &init).unwrap();
    let p = normed(8, 1);
    let net_run = run_network(&p, &c.frames, &m, &init).unwrap();
    assert_eq!(net_run.run, base);
    assert!(net_run.delta_f_norm.iter().all(|v| *v == 0.0));

    let mut tape = Tape::new();
    let net = Net::bind(&mut tape, &p);
    let f = forward_sequence(&mut tape, &net, &c.frames, &m, &init).unwrap();
    for (a, b) in f.states.iter().zip(&base.states) {
        assert_eq!(tape.value(&a.mean), &b.mean);
        assert_eq!(tape.value(&a.cov), &b.cov);
    }
}

#[test]
fn taped_and_plain_runs_agree_for_random_params() {
    let c = case(20, 5);
    let m = model();
    let init = InitConfig::default();
    let p = normed(6, 2).perturbed(3, 0.05);
    let plain = run_network(&p, &c.frames, &m, &init).unwrap();
    let mut tape = Tape::new();
    let net = Net::bind(&mut tape, &p);
    let f = forward_sequence(&mut tape, &net, &c.frames, &m, &init).unwrap();
    for (a, b) in f.extensions.iter().zip(&plain.run.extensions) {
        assert_eq!(tape.value(&a.param), &b.param);
        assert_eq!(a.dof, b.dof);
    }
    assert_eq!(run_network(&p, &c.frames, &m, &init).unwrap(), plain);
}

#[test]
fn minimal_sequence_and_too_short() {
    let c = case(2, 6);
    let p = normed(4, 0);
    let r = run_network(&p, &c.frames, &model(), &InitConfig::default()).unwrap();
    assert_eq!(r.run.states.len(), 1);
    assert!(matches!(
        run_network(&p, &c.frames[..1], &model(), &InitConfig::default()),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn loss_examples() {
    let mut e = Eval;
    let s = TrackState::new([3.0, 4.0, 1.0, 1.0], Mat::identity(4));
    let x = ExtensionState { dof: 8.0, param: Mat::diag(&[50.0, 2.0]) };
    let truth_ext = [Mat::diag(&[25.0, 1.0])];
    let l = sequence_loss(&mut e, core::slice::from_ref(&s), core::slice::from_ref(&x), &[[3.0, 4.0, 1.0, 1.0]], &truth_ext).unwrap();
    assert_eq!(l.data()[0], 0.0);
    let l = sequence_loss(&mut e, core::slice::from_ref(&s), core::slice::from_ref(&x), &[[0.0, 0.0, 1.0, 1.0]], &truth_ext).unwrap();
    assert_eq!(l.data()[0], 12.5);
    let p = NetworkParams::zeros(3);
    let net = Net::bind(&mut e, &p);
    let reg = loss(&mut e, &net, core::slice::from_ref(&s), core::slice::from_ref(&x), &[[0.0, 0.0, 1.0, 1.0]], &truth_ext, 0.5).unwrap();
    assert_eq!(reg.data()[0], 12.5);
    assert!(matches!(
        sequence_loss(&mut e, &[s], &[x], &[], &truth_ext),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn gradient_structure_at_init() {
    let c = case(12, 7);
    let m = model();
    let init = InitConfig::default();
    let p = normed(6, 3).with_masks(Masks { jub: true, ..Masks::default() });
    let g = sequence_gradient(&p, &c, &m, &init, 0.0, None).unwrap();
    // masked measurement heads never touch the loss
    for s in [slot::DH_W, slot::DH_B, slot::PH_W, slot::PH_B, slot::PH_GAIN] {
        assert!(g.grads[s].data().iter().all(|v| *v == 0.0));
    }
    // zero gains block the weight gradients of the covariance heads ...
    assert!(g.grads[slot::PF_W].data().iter().all(|v| *v == 0.0));
    // ... but the gains and the additive heads learn immediately
    assert!(g.grads[slot::PF_GAIN].data().iter().any(|v| *v != 0.0));
    assert!(g.grads[slot::DF_W].data().iter().any(|v| *v != 0.0));
    assert!(g.grads.iter().all(|t| t.is_finite()));
    assert_eq!(g.loss, case_loss(&p, &c, &m, &init).unwrap());
}

#[test]
fn sgd_examples() {
    let cfg = TrainConfig { learning_rate: 1.0, momentum: 0.0, clip: 1e9, ..TrainConfig::default() };
    let mut p = NetworkParams::init(2, 0).perturbed(1, 0.1);
    let before = p.clone();
    let mut sgd = Sgd::new(&cfg, &p);
    let zeros: Vec<Mat> = p.tensors.iter().map(|t| Mat::zeros(t.rows(), t.cols())).collect();
    sgd.step(&mut p, &zeros);
    assert_eq!(p, before);

    let grads: Vec<Mat> = p.tensors.iter().map(|t| t.map(|_| 0.01)).collect();
    sgd.step(&mut p, &grads);
    for (s, g) in grads.iter().enumerate() {
        if slot::GAINS.contains(&s) {
            continue;
        }
        let expected = before.tensors[s].sub(g);
        assert!(p.tensors[s].max_abs_diff(&expected) < 1e-15);
    }

    let mut g = [Mat::col(&[6.0, 8.0])];
    assert_eq!(train::clip_global_norm(&mut g, 1.0), 10.0);
    assert!(g[0].max_abs_diff(&Mat::col(&[0.6, 0.8])) < 1e-15);
}

#[test]
fn gains_stay_non_negative() {
    let cfg = TrainConfig { learning_rate: 1.0, momentum: 0.0, ..TrainConfig::default() };
    let mut p = NetworkParams::init(2, 0);
    let mut sgd = Sgd::new(&cfg, &p);
    let grads: Vec<Mat> = p.tensors.iter().map(|t| t.map(|_| 1.0)).collect();
    sgd.step(&mut p, &grads);
    for s in slot::GAINS {
        assert!(p.tensors[s].data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn one_epoch_without_learning_rate_keeps_params() {
    let cases: Vec<Case> = (0..4).map(|i| case(10, 20 + i)).collect();
    let refs: Vec<&Case> = cases.iter().collect();
    let cfg = TrainConfig { learning_rate: 0.0, epochs: 1, folds: 1, batch_size: 2, memory_dim: 4, ..TrainConfig::default() };
    let template = normed(4, 0);
    let out = train(&refs, &model(), &InitConfig::default(), &cfg, &template, &Sequential, &mut |_| {}).unwrap();
    assert_eq!(out.params, template);
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.folds.len(), 1);
    assert_eq!(out.folds[0].val_size, 1);
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let cases: Vec<Case> = (0..6).map(|i| case(12, 40 + i)).collect();
    let refs: Vec<&Case> = cases.iter().collect();
    let cfg = TrainConfig { epochs: 2, folds: 3, batch_size: 2, memory_dim: 4, learning_rate: 1e-3, ..TrainConfig::default() };
    let template = normed(4, 0);
    let mut seen = 0;
    let a = train(&refs, &model(), &InitConfig::default(), &cfg, &template, &Sequential, &mut |_| seen += 1).unwrap();
    let b = train(&refs, &model(), &InitConfig::default(), &cfg, &template, &Sequential, &mut |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(seen, 6);
    assert_eq!(a.history.len(), 6);
    assert!(a.best_val_loss <= a.folds.iter().map(|f| f.initial.loss).fold(f64::INFINITY, f64::min));
}

#[test]
fn fold_splits_partition() {
    for (n, k) in [(10, 5), (7, 3), (5, 1)] {
        let mut seen = alloc::vec![0; n];
        for f in 0..k {
            let (t, v) = train::fold_split(n, k, f);
            assert_eq!(t.len() + v.len(), n);
            assert!(!v.is_empty() && !t.is_empty());
            for i in v {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|c| *c == 1) || k == 1);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let m = model();
    let init = InitConfig::default();
    let c = case(5, 8);
    let p = normed(3, 4);
    let r = grad_check(&p, &c, &m, &init, 1e-4, 1e-5, None).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    assert_eq!(r.checked, p.parameter_count());
    let r = grad_check(&p.perturbed(5, 0.3), &c, &m, &init, 1e-4, 1e-5, None).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn corrupted_adjoint_is_detected() {
    let m = model();
    let init = InitConfig::default();
    let c = case(5, 9);
    let p = normed(3, 4).perturbed(6, 0.3);
    for fault in [AdjointFault::HalfTanh, AdjointFault::SolveMatrixArgument] {
        let r = grad_check(&p, &c, &m, &init, 1e-4, 1e-5, Some(fault)).unwrap();
        assert!(r.max_rel_error > 1e-2, "{fault:?}: {r:?}");
    }
}

