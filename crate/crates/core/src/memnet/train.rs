//! Optimiser, cross-validated training loop and finite-difference gradient check.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{case_loss, case_objective, run_network, sequence_gradient, NetworkParams, SequenceGradient};
use crate::autodiff::AdjointFault;
use crate::error::{Error, Result};
use crate::filter::InitConfig;
use crate::metrics::{self, CaseMetrics};
use crate::models::NominalModel;
use crate::simulator::Case;
use crate::spd::Mat;

/// Runs independent per-sequence jobs and returns their results in index order.
///
/// The trainer reduces the results sequentially in that order, so any
/// implementation that preserves ordering yields identical parameters.
pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync;
}

/// Single-threaded [`Executor`].
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        (0..n).map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Sequences per gradient step.
    pub batch_size: usize,
    /// L2 coefficient γ.
    pub gamma: f64,
    /// Cross-validation folds; 1 holds out the last fifth instead.
    pub folds: usize,
    pub seed: u64,
    pub memory_dim: usize,
    /// Global gradient-norm clip.
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 60,
            batch_size: 8,
            gamma: 1e-4,
            folds: 5,
            seed: 0,
            memory_dim: super::DEFAULT_MEMORY_DIM,
            clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [self.learning_rate, self.momentum, self.gamma, self.clip];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) || !(self.clip > 0.0) || self.momentum >= 1.0 {
            return Err(Error::InvalidConfig("learning rate, gamma must be >= 0, momentum in [0, 1), clip > 0"));
        }
        if self.batch_size == 0 || self.folds == 0 || self.memory_dim == 0 {
            return Err(Error::InvalidConfig("batch size, folds and memory dim must be positive"));
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint Frobenius norm is at most `clip`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Mat], clip: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().map(Mat::sum_sq).sum::<f64>());
    if norm > clip {
        let s = clip / norm;
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

/// Momentum SGD with global-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip: f64,
    velocity: Vec<Mat>,
}

impl Sgd {
    pub fn new(cfg: &TrainConfig, params: &NetworkParams) -> Self {
        Sgd {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            clip: cfg.clip,
            velocity: params.tensors.iter().map(|t| Mat::zeros(t.rows(), t.cols())).collect(),
        }
    }

    /// `v ← μv + clip(g)`, `θ ← θ − η·v`, then gains clamped at zero.
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &[Mat]) -> f64 {
        let mut g = grads.to_vec();
        let norm = clip_global_norm(&mut g, self.clip);
        for ((theta, v), g) in params.tensors.iter_mut().zip(&mut self.velocity).zip(&g) {
            *v = v.scale(self.momentum).add(g);
            *theta = theta.sub(&v.scale(self.learning_rate));
        }
        params.clamp_gains();
        norm
    }
}

/// Mean validation loss and metrics of a parameter set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    /// Mean data loss.
    pub loss: f64,
    /// Root of the mean squared position error (m).
    pub rmse: f64,
    pub mean_iou: f64,
    pub mean_gwd: f64,
}

impl EvalSummary {
    /// Marker for a parameter set whose filter run failed.
    pub const FAILED: EvalSummary =
        EvalSummary { loss: f64::INFINITY, rmse: f64::INFINITY, mean_iou: 0.0, mean_gwd: f64::INFINITY };
}

/// Runs `params` over `cases` and scores the posteriors.
pub fn evaluate_params<E: Executor>(
    params: &NetworkParams,
    cases: &[&Case],
    model: &NominalModel,
    init: &InitConfig,
    exec: &E,
) -> Result<EvalSummary> {
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_case: Vec<Result<(f64, CaseMetrics)>> = exec.map(cases.len(), |i| {
        let case = cases[i];
        let run = run_network(params, &case.frames, model, init)?;
        let loss = case_loss(params, case, model, init)?;
        Ok((loss, metrics::evaluate_case(&case.truth, &run.run)?))
    });
    let mut loss = 0.0;
    let mut scored = Vec::with_capacity(cases.len());
    for r in per_case {
        let (l, m) = r?;
        loss += l;
        scored.push(m);
    }
    let report = metrics::aggregate(scored)?;
    Ok(EvalSummary {
        loss: loss / cases.len() as f64,
        rmse: report.rmse,
        mean_iou: report.mean_iou,
        mean_gwd: report.mean_gwd,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    /// Mean objective over the epoch's batches (evaluated before each step).
    pub train_loss: f64,
    pub val: EvalSummary,
    /// Batches dropped because a sequence failed numerically.
    pub skipped_batches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    /// Validation summary of the untrained network.
    pub initial: EvalSummary,
    /// Epoch with the lowest validation loss; 0 means the untrained network.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss over all folds and epochs.
    pub params: NetworkParams,
    pub best_fold: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub folds: Vec<FoldReport>,
}

/// Training and validation indices for fold `f` of `n` sequences.
pub fn fold_split(n: usize, folds: usize, f: usize) -> (Vec<usize>, Vec<usize>) {
    let (start, end) = if folds == 1 {
        (n - (n / 5).max(1), n)
    } else {
        (f * n / folds, (f + 1) * n / folds)
    };
    ((0..start).chain(end..n).collect(), (start..end).collect())
}

fn mean_gradient(results: Vec<SequenceGradient>) -> (f64, Vec<Mat>) {
    let n = results.len() as f64;
    let mut it = results.into_iter();
    let first = it.next().expect("non-empty batch");
    let mut objective = first.objective;
    let mut grads = first.grads;
    for r in it {
        objective += r.objective;
        for (g, h) in grads.iter_mut().zip(&r.grads) {
            g.add_assign(h);
        }
    }
    (objective / n, grads.iter().map(|g| g.scale(1.0 / n)).collect())
}

/// k-fold cross-validated BPTT training. Every fold starts from `template`
/// (which carries the masks and the frozen feature normalisation); the
/// returned parameters are the best over all folds and epochs, the untrained
/// network included, by mean validation loss.
pub fn train<E: Executor>(
    cases: &[&Case],
    model: &NominalModel,
    init: &InitConfig,
    cfg: &TrainConfig,
    template: &NetworkParams,
    exec: &E,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    template.validate()?;
    let n = cases.len();
    if n < 2 || n < cfg.folds {
        return Err(Error::EmptyDataset);
    }
    let mut best: Option<(f64, usize, usize, NetworkParams)> = None;
    let mut history = Vec::new();
    let mut reports = Vec::new();
    let mut consider = |loss: f64, fold: usize, epoch: usize, params: &NetworkParams| {
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, fold, epoch, params.clone()));
        }
    };

    for fold in 0..cfg.folds {
        let (train_idx, val_idx) = fold_split(n, cfg.folds, fold);
        let val_cases: Vec<&Case> = val_idx.iter().map(|&i| cases[i]).collect();
        let mut params = template.clone();
        let mut sgd = Sgd::new(cfg, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(fold as u64);
        let evaluate = |p: &NetworkParams| {
            evaluate_params(p, &val_cases, model, init, exec).unwrap_or(EvalSummary::FAILED)
        };

        let initial = evaluate(&params);
        consider(initial.loss, fold, 0, &params);
        let mut report = FoldReport {
            fold,
            train_size: train_idx.len(),
            val_size: val_idx.len(),
            initial,
            best_epoch: 0,
            best_val_loss: initial.loss,
        };

        let mut order = train_idx.clone();
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let (mut loss_sum, mut batches, mut skipped) = (0.0, 0usize, 0usize);
            for batch in order.chunks(cfg.batch_size) {
                let results = exec.map(batch.len(), |i| {
                    sequence_gradient(&params, cases[batch[i]], model, init, cfg.gamma, None)
                });
                match results.into_iter().collect::<Result<Vec<_>>>() {
                    Ok(r) => {
                        let (objective, grads) = mean_gradient(r);
                        sgd.step(&mut params, &grads);
                        loss_sum += objective;
                        batches += 1;
                    }
                    Err(_) => skipped += 1,
                }
            }
            let val = evaluate(&params);
            let record = EpochRecord {
                fold,
                epoch,
                train_loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
                val,
                skipped_batches: skipped,
            };
            on_epoch(&record);
            history.push(record);
            if val.loss < report.best_val_loss {
                report.best_val_loss = val.loss;
                report.best_epoch = epoch;
            }
            consider(val.loss, fold, epoch, &params);
        }
        reports.push(report);
    }

    let (best_val_loss, best_fold, best_epoch, params) = best.expect("at least one fold evaluated");
    Ok(TrainOutcome { params, best_fold, best_epoch, best_val_loss, history, folds: reports })
}

/// Denominator floor of the relative error in [`grad_check`], as a fraction
/// of the largest analytic gradient entry (and never below this value).
///
/// Central differences of a loss of size `|f|` carry roundoff of order
/// `|f|·ε/h`; entries far below the gradient's own scale are therefore judged
/// against that scale rather than against themselves.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Worst disagreement between backpropagated and central-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR · max(1, ‖a‖_∞))`.
    pub max_rel_error: f64,
    pub worst_tensor: usize,
    pub worst_entry: usize,
    pub checked: usize,
}

/// Compares every entry of the gradient of the objective on `case` with a
/// central difference of step `step`.
pub fn grad_check(
    params: &NetworkParams,
    case: &Case,
    model: &NominalModel,
    init: &InitConfig,
    gamma: f64,
    step: f64,
    fault: Option<AdjointFault>,
) -> Result<GradCheck> {
    let analytic = sequence_gradient(params, case, model, init, gamma, fault)?;
    let largest = analytic.grads.iter().flat_map(|g| g.data()).fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    let floor = GRAD_CHECK_FLOOR * largest.max(1.0);
    let mut probe = params.clone();
    let mut out = GradCheck { max_rel_error: 0.0, worst_tensor: 0, worst_entry: 0, checked: 0 };
    for (s, g) in analytic.grads.iter().enumerate() {
        for i in 0..g.data().len() {
            let orig = params.tensors[s].data()[i];
            probe.tensors[s].data_mut()[i] = orig + step;
            let up = case_objective(&probe, case, model, init, gamma)?;
            probe.tensors[s].data_mut()[i] = orig - step;
            let down = case_objective(&probe, case, model, init, gamma)?;
            probe.tensors[s].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = g.data()[i];
            let rel = libm::fabs(a - numeric) / libm::fabs(a).max(libm::fabs(numeric)).max(floor);
            let rel = if rel.is_nan() { f64::INFINITY } else { rel };
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst_tensor = s;
                out.worst_entry = i;
            }
            out.checked += 1;
        }
    }
    Ok(out)
}
