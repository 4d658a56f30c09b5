//! Recurrent memory network that supplies the filter's mismatch terms.
//!
//! An LSTM cell (the memory update block) summarises the posterior history
//! and the incoming frame. Linear heads on the memory produce the evolution
//! compensation (Δf, Pf, Pφ); linear heads on the predicted beliefs produce
//! the measurement compensation (Δh, Ph). Every head is written against
//! [`Backend`] so the same code is evaluated plainly or recorded for
//! backpropagation through the whole filter recursion.
//!
//! Covariance heads are `gain ⊙ softplus(affine)` with a non-negative gain
//! that starts at zero: an untrained network produces exactly zero
//! compensation, so it reproduces the compensation-off filter bit for bit,
//! while the gains still receive a gradient on the first step.

mod train;

pub use train::{
    evaluate_params, grad_check, train, EpochRecord, EvalSummary, Executor, FoldReport, GradCheck,
    Sequential, Sgd, TrainConfig, TrainOutcome, GRAD_CHECK_FLOOR,
};

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{AdjointFault, Backend, Eval, Tape};
use crate::error::{Error, Result};
use crate::filter::{self, extension_mean, FilterRun, InitConfig};
use crate::models::{
    frame_stats, Compensation, ExtensionState, FrameStats, MeasurementFrame, NominalModel, TrackState,
};
use crate::simulator::{Case, GroundTruthSequence};
use crate::spd::{self, Mat};

/// Length of the memory-update input vector.
pub const FEATURE_DIM: usize = 18;
/// Leading features that describe a (track, extension) belief pair; these
/// are the measurement-head inputs.
pub const BELIEF_FEATURES: usize = 12;
pub const DEFAULT_MEMORY_DIM: usize = 64;

/// Ridge added to the sample covariance of a frame before its log-Cholesky
/// encoding, so single-point and collinear frames stay finite.
const SCATTER_RIDGE: f64 = 1e-6;

/// Parameter tensor slots of [`NetworkParams::tensors`].
pub mod slot {
    /// LSTM weights, `4h × (18 + h)`, gate blocks ordered input, forget, candidate, output.
    pub const LSTM_W: usize = 0;
    pub const LSTM_B: usize = 1;
    /// Memory covariance head p^c, `h × h`.
    pub const COV_W: usize = 2;
    pub const COV_B: usize = 3;
    /// Δf head over `[ĉ ⊕ p^c]`, `4 × 2h`.
    pub const DF_W: usize = 4;
    pub const DF_B: usize = 5;
    /// Pf diagonal head, `4 × 2h`, and its non-negative output gain.
    pub const PF_W: usize = 6;
    pub const PF_B: usize = 7;
    pub const PF_GAIN: usize = 8;
    /// Pφ Cholesky-factor head `(l00, l11, l10)`, `3 × 2h`, and a scalar gain.
    pub const PPHI_W: usize = 9;
    pub const PPHI_B: usize = 10;
    pub const PPHI_GAIN: usize = 11;
    /// Δh head over the 12 belief features.
    pub const DH_W: usize = 12;
    pub const DH_B: usize = 13;
    /// Ph diagonal head and its non-negative output gain.
    pub const PH_W: usize = 14;
    pub const PH_B: usize = 15;
    pub const PH_GAIN: usize = 16;
    pub const COUNT: usize = 17;

    /// Slots clamped to be non-negative after every optimiser step.
    pub const GAINS: [usize; 3] = [PF_GAIN, PPHI_GAIN, PH_GAIN];
}

/// Stable names of the parameter tensors, in slot order.
pub const TENSOR_NAMES: [&str; slot::COUNT] = [
    "lstm.w", "lstm.b", "cov.w", "cov.b", "df.w", "df.b", "pf.w", "pf.b", "pf.gain", "pphi.w", "pphi.b",
    "pphi.gain", "dh.w", "dh.b", "ph.w", "ph.b", "ph.gain",
];

/// Expected `(rows, cols)` of every tensor for memory size `h`.
pub fn tensor_shapes(h: usize) -> [(usize, usize); slot::COUNT] {
    let b = BELIEF_FEATURES;
    [
        (4 * h, FEATURE_DIM + h),
        (4 * h, 1),
        (h, h),
        (h, 1),
        (4, 2 * h),
        (4, 1),
        (4, 2 * h),
        (4, 1),
        (4, 1),
        (3, 2 * h),
        (3, 1),
        (1, 1),
        (2, b),
        (2, 1),
        (2, b),
        (2, 1),
        (2, 1),
    ]
}

/// Ablation switches; `true` disables the block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Masks {
    pub mub: bool,
    pub jeb: bool,
    pub jub: bool,
}

/// Per-feature standardisation `(f − mean) / scale`, frozen before training.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Default for FeatureNorm {
    fn default() -> Self {
        FeatureNorm { mean: vec![0.0; FEATURE_DIM], scale: vec![1.0; FEATURE_DIM] }
    }
}

impl FeatureNorm {
    /// Mean and standard deviation of `samples` (each `FEATURE_DIM × 1`).
    pub fn fit(samples: &[Mat]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.data()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; FEATURE_DIM];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s.data()).zip(&mean) {
                *acc += (v - m) * (v - m) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-12 { libm::sqrt(*v) } else { 1.0 }).collect();
        Ok(FeatureNorm { mean, scale })
    }

    fn validate(&self) -> Result<()> {
        let ok = self.mean.len() == FEATURE_DIM
            && self.scale.len() == FEATURE_DIM
            && self.mean.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("feature normalisation must hold 18 finite means and positive scales"))
        }
    }
}

/// Weights, ablation masks and frozen feature normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub memory_dim: usize,
    pub masks: Masks,
    pub norm: FeatureNorm,
    pub tensors: Vec<Mat>,
}

impl NetworkParams {
    /// Fresh network: uniform `±1/√h` LSTM and memory-covariance weights,
    /// forget-gate bias 1, and all compensation heads at calibrated zero.
    pub fn init(memory_dim: usize, seed: u64) -> Self {
        let shapes = tensor_shapes(memory_dim);
        let mut tensors: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / libm::sqrt(memory_dim as f64);
        for s in [slot::LSTM_W, slot::COV_W] {
            for v in tensors[s].data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        for v in &mut tensors[slot::LSTM_B].data_mut()[memory_dim..2 * memory_dim] {
            *v = 1.0;
        }
        NetworkParams { memory_dim, masks: Masks::default(), norm: FeatureNorm::default(), tensors }
    }

    /// Every tensor zero (the all-zero network).
    pub fn zeros(memory_dim: usize) -> Self {
        let tensors = tensor_shapes(memory_dim).iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
        NetworkParams { memory_dim, masks: Masks::default(), norm: FeatureNorm::default(), tensors }
    }

    pub fn with_masks(mut self, masks: Masks) -> Self {
        self.masks = masks;
        self
    }

    pub fn with_norm(mut self, norm: FeatureNorm) -> Self {
        self.norm = norm;
        self
    }

    /// Adds seeded `N(0, scale²)` noise to every entry; gains are kept non-negative.
    pub fn perturbed(&self, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for t in &mut out.tensors {
            for v in t.data_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += scale * e;
            }
        }
        out.clamp_gains();
        out
    }

    pub fn clamp_gains(&mut self) {
        for s in slot::GAINS {
            for v in self.tensors[s].data_mut() {
                *v = v.max(0.0);
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    /// Σ over all tensors of the squared entries.
    pub fn sum_sq(&self) -> f64 {
        self.tensors.iter().map(Mat::sum_sq).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.memory_dim == 0 || self.tensors.len() != slot::COUNT {
            return Err(Error::ShapeMismatch);
        }
        for (t, shape) in self.tensors.iter().zip(tensor_shapes(self.memory_dim)) {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch);
            }
            if !t.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        if self.tensors_gain_negative() {
            return Err(Error::InvalidConfig("compensation gains must be non-negative"));
        }
        self.norm.validate()
    }

    fn tensors_gain_negative(&self) -> bool {
        slot::GAINS.iter().any(|&s| self.tensors[s].data().iter().any(|v| *v < 0.0))
    }
}

/// LSTM memory with its diagonal uncertainty head.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState<V = Mat> {
    pub cell: V,
    /// Hidden vector, used as the memory mean ĉ.
    pub hidden: V,
    /// Non-negative diagonal memory covariance p^c.
    pub pc: V,
}

impl<V> MemoryState<V> {
    pub fn zeros<B: Backend<V = V>>(b: &mut B, dim: usize) -> Self {
        MemoryState { cell: b.zeros(dim, 1), hidden: b.zeros(dim, 1), pc: b.zeros(dim, 1) }
    }
}

/// Backend handles of the parameter tensors plus the non-differentiable settings.
pub struct Net<'a, V> {
    pub params: &'a NetworkParams,
    pub t: Vec<V>,
}

impl<'a, V: Clone> Net<'a, V> {
    /// Registers every tensor on the backend; with a [`Tape`] these are the
    /// leaves whose adjoints form the parameter gradient.
    pub fn bind<B: Backend<V = V>>(b: &mut B, params: &'a NetworkParams) -> Self {
        Net { params, t: params.tensors.iter().map(|m| b.variable(m.clone())).collect() }
    }

    fn h(&self) -> usize {
        self.params.memory_dim
    }
}

fn affine<B: Backend>(b: &mut B, w: &B::V, bias: &B::V, x: &B::V) -> B::V {
    let wx = b.matmul(w, x);
    b.add(&wx, bias)
}

fn range(start: usize, len: usize) -> Vec<usize> {
    (start..start + len).collect()
}

fn log_cholesky<B: Backend>(b: &mut B, l: &B::V) -> B::V {
    let d = b.gather(l, &[0, 3], 2, 1);
    let ld = b.ln(&d);
    let off = b.gather(l, &[2], 1, 1);
    b.concat(&[ld, off])
}

/// Unnormalised 12 belief features: mean (4), log covariance diagonal (4),
/// log-Cholesky of the point extent (3), log dof (1).
pub fn belief_features<B: Backend>(
    b: &mut B,
    state: &TrackState<B::V>,
    ext: &ExtensionState<B::V>,
) -> Result<B::V> {
    let diag = b.gather(&state.cov, &[0, 5, 10, 15], 4, 1);
    let log_diag = b.ln(&diag);
    let extent = extension_mean(b, ext)?;
    let l = b.cholesky(&extent).map_err(|_| Error::SingularExtension)?;
    let lc = log_cholesky(b, &l);
    let log_dof = b.constant(Mat::col(&[libm::log(ext.dof)]));
    Ok(b.concat(&[state.mean.clone(), log_diag, lc, log_dof]))
}

/// Unnormalised 6 frame features: centroid offset from the track position
/// (2), log-Cholesky of the ridge-regularised sample covariance (3), log n (1).
pub fn frame_features<B: Backend>(b: &mut B, state: &TrackState<B::V>, fs: &FrameStats) -> Result<B::V> {
    let pos = b.gather(&state.mean, &[0, 1], 2, 1);
    let centroid = b.constant(fs.mean.clone());
    let offset = b.sub(&centroid, &pos);
    let denom = fs.count.saturating_sub(1).max(1) as f64;
    let cov = fs.scatter.scale(1.0 / denom).add(&Mat::identity(2).scale(SCATTER_RIDGE));
    let l = spd::cholesky(&cov)?;
    let scatter = Mat::col(&[libm::log(l[(0, 0)]), libm::log(l[(1, 1)]), l[(1, 0)]]);
    let rest = b.constant(Mat::vstack(&[&scatter, &Mat::col(&[libm::log(fs.count as f64)])]));
    Ok(b.concat(&[offset, rest]))
}

fn standardize<B: Backend>(b: &mut B, x: &B::V, norm: &FeatureNorm, len: usize) -> B::V {
    let mean = b.constant(Mat::col(&norm.mean[..len]));
    let inv = b.constant(Mat::col(&norm.scale[..len]).map(|s| 1.0 / s));
    let centered = b.sub(x, &mean);
    b.hadamard(&centered, &inv)
}

/// The standardised 18-feature memory input for a posterior pair and the next frame.
pub fn encode_inputs<B: Backend>(
    b: &mut B,
    state: &TrackState<B::V>,
    ext: &ExtensionState<B::V>,
    fs: &FrameStats,
    norm: &FeatureNorm,
) -> Result<B::V> {
    let raw = raw_features(b, state, ext, fs)?;
    Ok(standardize(b, &raw, norm, FEATURE_DIM))
}

fn raw_features<B: Backend>(
    b: &mut B,
    state: &TrackState<B::V>,
    ext: &ExtensionState<B::V>,
    fs: &FrameStats,
) -> Result<B::V> {
    let belief = belief_features(b, state, ext)?;
    let frame = frame_features(b, state, fs)?;
    Ok(b.concat(&[belief, frame]))
}

/// One LSTM step followed by the memory covariance head.
pub fn mub_step<B: Backend>(b: &mut B, net: &Net<B::V>, features: &B::V, mem: &MemoryState<B::V>) -> MemoryState<B::V> {
    let h = net.h();
    if net.params.masks.mub {
        let pc = b.zeros(h, 1);
        return MemoryState { cell: mem.cell.clone(), hidden: mem.hidden.clone(), pc };
    }
    let input = b.concat(&[features.clone(), mem.hidden.clone()]);
    let z = affine(b, &net.t[slot::LSTM_W], &net.t[slot::LSTM_B], &input);
    let zi = b.gather(&z, &range(0, h), h, 1);
    let zf = b.gather(&z, &range(h, h), h, 1);
    let zg = b.gather(&z, &range(2 * h, h), h, 1);
    let zo = b.gather(&z, &range(3 * h, h), h, 1);
    let i = b.sigmoid(&zi);
    let f = b.sigmoid(&zf);
    let g = b.tanh(&zg);
    let o = b.sigmoid(&zo);
    let keep = b.hadamard(&f, &mem.cell);
    let write = b.hadamard(&i, &g);
    let cell = b.add(&keep, &write);
    let squashed = b.tanh(&cell);
    let hidden = b.hadamard(&o, &squashed);
    let pre = affine(b, &net.t[slot::COV_W], &net.t[slot::COV_B], &hidden);
    let pc = b.softplus(&pre);
    MemoryState { cell, hidden, pc }
}

/// `gain ⊙ softplus(W·x + b)`.
fn gained_softplus<B: Backend>(b: &mut B, net: &Net<B::V>, w: usize, bias: usize, gain: usize, x: &B::V) -> B::V {
    let pre = affine(b, &net.t[w], &net.t[bias], x);
    let sp = b.softplus(&pre);
    b.hadamard(&net.t[gain], &sp)
}

/// Evolution compensation `(Δf, Pf, Pφ)` from the memory.
pub fn jeb_heads<B: Backend>(b: &mut B, net: &Net<B::V>, mem: &MemoryState<B::V>) -> (B::V, B::V, B::V) {
    if net.params.masks.jeb {
        let (df, pf, pphi) = (b.zeros(4, 1), b.zeros(4, 4), b.zeros(2, 2));
        return (df, pf, pphi);
    }
    let input = b.concat(&[mem.hidden.clone(), mem.pc.clone()]);
    let df = affine(b, &net.t[slot::DF_W], &net.t[slot::DF_B], &input);
    let pf_diag = gained_softplus(b, net, slot::PF_W, slot::PF_B, slot::PF_GAIN, &input);
    let pf = b.scatter(&pf_diag, &[0, 5, 10, 15], 4, 4);

    let raw = affine(b, &net.t[slot::PPHI_W], &net.t[slot::PPHI_B], &input);
    let rd = b.gather(&raw, &[0, 1], 2, 1);
    let d = b.softplus(&rd);
    let off = b.gather(&raw, &[2], 1, 1);
    let ld = b.scatter(&d, &[0, 3], 2, 2);
    let lo = b.scatter(&off, &[2], 2, 2);
    let l = b.add(&ld, &lo);
    let lt = b.transpose(&l);
    let llt = b.matmul(&l, &lt);
    let pphi = b.mul_scalar(&llt, &net.t[slot::PPHI_GAIN]);
    (df, pf, pphi)
}

/// Measurement compensation `(Δh, Ph)` from the predicted beliefs.
pub fn jub_heads<B: Backend>(
    b: &mut B,
    net: &Net<B::V>,
    pred: &TrackState<B::V>,
    ext_pred: &ExtensionState<B::V>,
) -> Result<(B::V, B::V)> {
    if net.params.masks.jub {
        let (dh, ph) = (b.zeros(2, 1), b.zeros(2, 2));
        return Ok((dh, ph));
    }
    let raw = belief_features(b, pred, ext_pred)?;
    let input = standardize(b, &raw, &net.params.norm, BELIEF_FEATURES);
    let dh = affine(b, &net.t[slot::DH_W], &net.t[slot::DH_B], &input);
    let ph_diag = gained_softplus(b, net, slot::PH_W, slot::PH_B, slot::PH_GAIN, &input);
    let ph = b.scatter(&ph_diag, &[0, 3], 2, 2);
    Ok((dh, ph))
}

/// Posterior sequence of a network-compensated run plus per-step diagnostics.
#[derive(Clone, Debug)]
pub struct Forward<V = Mat> {
    pub states: Vec<TrackState<V>>,
    pub extensions: Vec<ExtensionState<V>>,
    /// ‖Δf‖ used at each step.
    pub delta_f_norm: Vec<f64>,
    /// ‖z̃ − z⁻‖ at each step.
    pub innovation_norm: Vec<f64>,
}

fn norm_of<B: Backend>(b: &B, v: &B::V) -> f64 {
    b.value(v).frobenius()
}

/// Runs the compensated filter over `frames`: track initialisation on the
/// first frame, then memory update, evolution heads, prediction,
/// measurement heads and update for every later frame.
pub fn forward_sequence<B: Backend>(
    b: &mut B,
    net: &Net<B::V>,
    frames: &[MeasurementFrame],
    model: &NominalModel,
    init: &InitConfig,
) -> Result<Forward<B::V>> {
    if frames.len() < 2 {
        return Err(Error::LengthMismatch { expected: 2, found: frames.len() });
    }
    let (s0, e0) = filter::init_track(&frames[0], init, model)?;
    let mut state = TrackState { mean: b.constant(s0.mean), cov: b.constant(s0.cov) };
    let mut ext = ExtensionState { dof: e0.dof, param: b.constant(e0.param) };
    let mut mem = MemoryState::zeros(b, net.h());
    let steps = frames.len() - 1;
    let mut out = Forward {
        states: Vec::with_capacity(steps),
        extensions: Vec::with_capacity(steps),
        delta_f_norm: Vec::with_capacity(steps),
        innovation_norm: Vec::with_capacity(steps),
    };
    for (k, frame) in frames.iter().enumerate().skip(1) {
        let at_step = |e: Error| match e {
            Error::NonFinite => Error::NonFiniteAt { step: k },
            other => other,
        };
        let fs = frame_stats(frame)?;
        if !net.params.masks.mub {
            let features = encode_inputs(b, &state, &ext, &fs, &net.params.norm).map_err(at_step)?;
            mem = mub_step(b, net, &features, &mem);
        } else {
            // a masked memory block ignores its input and stays frozen
            let frozen = mem.hidden.clone();
            mem = mub_step(b, net, &frozen, &mem);
        }
        let (delta_f, p_f, p_phi) = jeb_heads(b, net, &mem);
        let (delta_h, p_h) = (b.zeros(2, 1), b.zeros(2, 2));
        let mut comp = Compensation { delta_f, p_f, delta_h, p_h, p_phi };
        let (pred, ext_pred) = filter::predict(b, &state, &ext, model, &comp).map_err(at_step)?;
        let (delta_h, p_h) = jub_heads(b, net, &pred, &ext_pred).map_err(at_step)?;
        comp.delta_h = delta_h;
        comp.p_h = p_h;
        let (post, ext_post, _, residual) =
            filter::correct(b, &pred, &ext_pred, &fs, model, &comp).map_err(at_step)?;
        out.delta_f_norm.push(norm_of(b, &comp.delta_f));
        out.innovation_norm.push(norm_of(b, &residual));
        out.states.push(post.clone());
        out.extensions.push(ext_post.clone());
        state = post;
        ext = ext_post;
    }
    Ok(out)
}

/// Data term `(1/2K)·Σ_k (‖x̂_k − x̄_k‖² + ‖Ê_k − X̄_k‖²_F)` with `Ê_k` the
/// point extent of posterior `k`; truths are aligned with the posteriors.
pub fn sequence_loss<B: Backend>(
    b: &mut B,
    states: &[TrackState<B::V>],
    extensions: &[ExtensionState<B::V>],
    truth_states: &[[f64; 4]],
    truth_extents: &[Mat],
) -> Result<B::V> {
    let k = states.len();
    for found in [extensions.len(), truth_states.len(), truth_extents.len()] {
        if found != k {
            return Err(Error::LengthMismatch { expected: k, found });
        }
    }
    if k == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut acc = b.zeros(1, 1);
    for i in 0..k {
        let x = b.constant(Mat::col(&truth_states[i]));
        let dx = b.sub(&states[i].mean, &x);
        let ex = b.sum_sq(&dx);
        let extent = extension_mean(b, &extensions[i])?;
        let xe = b.constant(truth_extents[i].clone());
        let de = b.sub(&extent, &xe);
        let ee = b.sum_sq(&de);
        let step = b.add(&ex, &ee);
        acc = b.add(&acc, &step);
    }
    Ok(b.scale(&acc, 1.0 / (2.0 * k as f64)))
}

/// Data term plus `γ·‖Θ‖²`.
pub fn loss<B: Backend>(
    b: &mut B,
    net: &Net<B::V>,
    states: &[TrackState<B::V>],
    extensions: &[ExtensionState<B::V>],
    truth_states: &[[f64; 4]],
    truth_extents: &[Mat],
    gamma: f64,
) -> Result<B::V> {
    let data = sequence_loss(b, states, extensions, truth_states, truth_extents)?;
    if gamma == 0.0 {
        return Ok(data);
    }
    let mut reg = b.zeros(1, 1);
    for t in &net.t {
        let s = b.sum_sq(t);
        reg = b.add(&reg, &s);
    }
    let weighted = b.scale(&reg, gamma);
    Ok(b.add(&data, &weighted))
}

fn truth_slices(truth: &GroundTruthSequence) -> (&[[f64; 4]], &[Mat]) {
    (&truth.states[1..], &truth.extents[1..])
}

/// Plain (untaped) run of the compensated filter.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkRun {
    pub run: FilterRun,
    pub delta_f_norm: Vec<f64>,
    pub innovation_norm: Vec<f64>,
}

pub fn run_network(
    params: &NetworkParams,
    frames: &[MeasurementFrame],
    model: &NominalModel,
    init: &InitConfig,
) -> Result<NetworkRun> {
    let mut e = Eval;
    let net = Net::bind(&mut e, params);
    let f = forward_sequence(&mut e, &net, frames, model, init)?;
    Ok(NetworkRun {
        run: FilterRun { states: f.states, extensions: f.extensions },
        delta_f_norm: f.delta_f_norm,
        innovation_norm: f.innovation_norm,
    })
}

/// Data loss of one case under `params`, evaluated without recording.
pub fn case_loss(params: &NetworkParams, case: &Case, model: &NominalModel, init: &InitConfig) -> Result<f64> {
    let mut e = Eval;
    let net = Net::bind(&mut e, params);
    let f = forward_sequence(&mut e, &net, &case.frames, model, init)?;
    let (ts, te) = truth_slices(&case.truth);
    Ok(sequence_loss(&mut e, &f.states, &f.extensions, ts, te)?.data()[0])
}

/// Objective (data loss + `γ‖Θ‖²`) of one case, evaluated without recording.
pub fn case_objective(
    params: &NetworkParams,
    case: &Case,
    model: &NominalModel,
    init: &InitConfig,
    gamma: f64,
) -> Result<f64> {
    Ok(case_loss(params, case, model, init)? + gamma * params.sum_sq())
}

/// Loss values and parameter gradient of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceGradient {
    /// Data term.
    pub loss: f64,
    /// Data term plus regulariser.
    pub objective: f64,
    /// d(objective)/dΘ, one matrix per tensor slot.
    pub grads: Vec<Mat>,
}

/// Backpropagation through the full recursion for one case.
pub fn sequence_gradient(
    params: &NetworkParams,
    case: &Case,
    model: &NominalModel,
    init: &InitConfig,
    gamma: f64,
    fault: Option<AdjointFault>,
) -> Result<SequenceGradient> {
    let mut tape = match fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let net = Net::bind(&mut tape, params);
    let f = forward_sequence(&mut tape, &net, &case.frames, model, init)?;
    let (ts, te) = truth_slices(&case.truth);
    let data = sequence_loss(&mut tape, &f.states, &f.extensions, ts, te)?;
    let loss_value = tape.value(&data).data()[0];
    let total = loss(&mut tape, &net, &f.states, &f.extensions, ts, te, gamma)?;
    let objective = tape.value(&total).data()[0];
    if !objective.is_finite() {
        return Err(Error::NonFinite);
    }
    let adj = tape.backward(total)?;
    let grads = net
        .t
        .iter()
        .zip(&params.tensors)
        .map(|(v, m)| adj.get_or_zero(*v, m.rows(), m.cols()))
        .collect();
    Ok(SequenceGradient { loss: loss_value, objective, grads })
}

/// Feature samples (posterior `k−1` with frame `k`) from compensation-off runs.
pub fn baseline_features<'a>(
    cases: impl IntoIterator<Item = &'a Case>,
    model: &NominalModel,
    init: &InitConfig,
) -> Result<Vec<Mat>> {
    let mut e = Eval;
    let mut samples = Vec::new();
    for case in cases {
        let run = filter::run_baseline(&case.frames, model, init)?;
        let (s0, e0) = filter::init_track(&case.frames[0], init, model)?;
        let mut prev = (s0, e0);
        for (k, frame) in case.frames.iter().enumerate().skip(1) {
            let fs = frame_stats(frame)?;
            samples.push(raw_features(&mut e, &prev.0, &prev.1, &fs)?);
            prev = (run.states[k - 1].clone(), run.extensions[k - 1].clone());
        }
    }
    Ok(samples)
}

/// Feature normalisation fitted on compensation-off runs of `cases`.
pub fn fit_feature_norm<'a>(
    cases: impl IntoIterator<Item = &'a Case>,
    model: &NominalModel,
    init: &InitConfig,
) -> Result<FeatureNorm> {
    FeatureNorm::fit(&baseline_features(cases, model, init)?)
}

#[cfg(test)]
mod tests;
