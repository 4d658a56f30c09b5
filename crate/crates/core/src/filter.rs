//! Joint kinematic/extension recursion.
//!
//! Every step is written against [`Backend`], so the same code runs as the
//! plain compensation-off baseline (`Eval` with [`Compensation::zero`]) and as
//! the differentiable backbone of the memory network (`Tape`).
//!
//! Degrees of freedom of the extension belief follow a recursion that only
//! depends on the measurement counts, so they are carried as `f64`.

use crate::autodiff::{Backend, Eval};
use crate::error::{Error, Result};
use crate::models::{
    frame_stats, Compensation, ExtensionState, ExtensionTransition, ExtensionUpdate, FrameStats,
    MeasurementFrame, NominalModel, TrackState, EXT_DIM, STATE_DIM,
};
use crate::spd::{self, Mat};

/// Eigenvalue floor, relative to the trace, applied to every covariance and
/// extension matrix the filter returns.
pub const PROJECTION_FLOOR: f64 = 1e-9;

const D: f64 = EXT_DIM as f64;

/// Intermediate quantities of the measurement update.
#[derive(Clone, Debug)]
pub struct InnovationStats<V = Mat> {
    /// z⁻ = h(x⁻) + Δh, 2×1.
    pub predicted_measurement: V,
    /// Pxz = P⁻·Hᵀ, 4×2.
    pub cross_cov: V,
    /// Pzz = H·P⁻·Hᵀ + B·X̂·Bᵀ/n + Ph, 2×2.
    pub innovation_cov: V,
    /// S⁻¹ = (H·P⁻·Hᵀ)·X⁻⁻¹ + (|B|^{d/2}/n)·I + Ph, 2×2.
    pub extension_gain: V,
    /// Point extent X̂ of the predicted extension belief.
    pub extent: V,
    pub count: usize,
}

/// Everything produced inside one [`filter_step`].
#[derive(Clone, Debug)]
pub struct StepDiagnostics<V = Mat> {
    pub predicted: TrackState<V>,
    pub predicted_extension: ExtensionState<V>,
    pub innovation: InnovationStats<V>,
    /// z̃ − z⁻.
    pub residual: V,
}

/// Initialisation settings for [`init_track`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub pos_var: f64,
    pub vel_var: f64,
    /// Initial extension degrees of freedom v₀ (> 8).
    pub dof: f64,
    /// Eigenvalue floor of the initial point extent (m²).
    pub min_extent: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { pos_var: 1.0, vel_var: 100.0, dof: 10.0, min_extent: 0.01 }
    }
}

fn project<B: Backend>(b: &mut B, v: &B::V) -> B::V {
    let eps = PROJECTION_FLOOR * libm::fabs(b.value(v).trace());
    b.sym_project(v, eps)
}

fn ensure_finite<B: Backend>(b: &B, v: &B::V) -> Result<()> {
    if b.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn lambda_of(dof: f64) -> f64 {
    dof - 2.0 * D - 2.0
}

/// x⁻ = f(x) + Δf, P⁻ = F·P·Fᵀ + Q + Pf.
pub fn predict_state<B: Backend>(
    b: &mut B,
    prior: &TrackState<B::V>,
    model: &NominalModel,
    comp: &Compensation<B::V>,
) -> Result<TrackState<B::V>> {
    let x = b.value(&prior.mean).clone();
    let (fx, jac) = model.transition.eval(&x);
    let moved = b.linearized(&prior.mean, fx, jac.clone());
    let mean = b.add(&moved, &comp.delta_f);

    let f = b.constant(jac.clone());
    let ft = b.constant(jac.transpose());
    let fp = b.matmul(&f, &prior.cov);
    let fpf = b.matmul(&fp, &ft);
    let q = b.constant(model.process_noise.clone());
    let with_q = b.add(&fpf, &q);
    let raw = b.add(&with_q, &comp.p_f);
    let cov = project(b, &raw);
    ensure_finite(b, &mean)?;
    ensure_finite(b, &cov)?;
    Ok(TrackState { mean, cov })
}

/// Predicted extension degrees of freedom for a posterior with `dof`.
pub fn predict_dof(dof: f64, delta: f64) -> Result<f64> {
    let l = lambda_of(dof);
    if !(l > 2.0) {
        return Err(Error::BadDof { dof });
    }
    Ok(2.0 * delta * (l + 1.0) * (l - 1.0) * (l - 2.0) / (l * l * (l + delta)) + 2.0 * D + 4.0)
}

pub fn predict_extension<B: Backend>(
    b: &mut B,
    prior: &ExtensionState<B::V>,
    model: &NominalModel,
    comp: &Compensation<B::V>,
) -> Result<ExtensionState<B::V>> {
    let l = lambda_of(prior.dof);
    let dof = predict_dof(prior.dof, model.delta)?;
    let a = b.constant(model.extension_transition.clone());
    let at = b.constant(model.extension_transition.transpose());
    let ax = b.matmul(&a, &prior.param);
    let axa = b.matmul(&ax, &at);
    let scaled = b.scale(&axa, model.delta);
    let mut inner = b.add(&scaled, &comp.p_phi);
    if model.transition_rule == ExtensionTransition::MeanPreserving {
        inner = b.scale(&inner, 1.0 / model.delta);
    }
    let raw = b.scale(&inner, (dof - 2.0 * D - 2.0) / l);
    let param = project(b, &raw);
    ensure_finite(b, &param)?;
    Ok(ExtensionState { dof, param })
}

/// Point extent `param / (dof − 2d − 2)`.
pub fn extension_mean<B: Backend>(b: &mut B, ext: &ExtensionState<B::V>) -> Result<B::V> {
    let l = lambda_of(ext.dof);
    if !(l > 0.0) {
        return Err(Error::BadDof { dof: ext.dof });
    }
    Ok(b.scale(&ext.param, 1.0 / l))
}

/// z⁻ = h(x⁻) + Δh.
pub fn predict_measurement<B: Backend>(
    b: &mut B,
    pred: &TrackState<B::V>,
    model: &NominalModel,
    comp: &Compensation<B::V>,
) -> B::V {
    let x = b.value(&pred.mean).clone();
    let (hx, jac) = model.measurement.eval(&x);
    let z = b.linearized(&pred.mean, hx, jac);
    b.add(&z, &comp.delta_h)
}

pub fn innovation<B: Backend>(
    b: &mut B,
    pred: &TrackState<B::V>,
    ext_pred: &ExtensionState<B::V>,
    model: &NominalModel,
    comp: &Compensation<B::V>,
    n: usize,
) -> Result<InnovationStats<B::V>> {
    if n == 0 {
        return Err(Error::EmptyFrame);
    }
    let inv_n = 1.0 / n as f64;
    let x = b.value(&pred.mean).clone();
    let (_, jac) = model.measurement.eval(&x);
    let h = b.constant(jac.clone());
    let ht = b.constant(jac.transpose());
    let cross_cov = b.matmul(&pred.cov, &ht);
    let hph = b.matmul(&h, &cross_cov);

    let extent = extension_mean(b, ext_pred)?;
    let bm = b.constant(model.distortion.clone());
    let bt = b.constant(model.distortion.transpose());
    let bx = b.matmul(&bm, &extent);
    let spread = b.matmul(&bx, &bt);
    let spread_n = b.scale(&spread, inv_n);
    let s1 = b.add(&hph, &spread_n);
    let s2 = b.add(&s1, &comp.p_h);
    let innovation_cov = b.symmetrize(&s2);

    let eye = b.constant(Mat::identity(EXT_DIM));
    let x_inv = b.solve_spd(&ext_pred.param, &eye).map_err(|_| Error::SingularExtension)?;
    let ratio = b.matmul(&hph, &x_inv);
    let det_term = libm::pow(libm::fabs(model.distortion.determinant2()), D / 2.0) * inv_n;
    let det_eye = b.constant(Mat::identity(EXT_DIM).scale(det_term));
    let g1 = b.add(&ratio, &det_eye);
    let extension_gain = b.add(&g1, &comp.p_h);

    let predicted_measurement = predict_measurement(b, pred, model, comp);
    ensure_finite(b, &innovation_cov)?;
    Ok(InnovationStats { predicted_measurement, cross_cov, innovation_cov, extension_gain, extent, count: n })
}

/// Kalman-form update with gain `Pxz·Pzz⁻¹`.
pub fn update_state<B: Backend>(
    b: &mut B,
    pred: &TrackState<B::V>,
    stats: &InnovationStats<B::V>,
    measurement_mean: &B::V,
) -> Result<TrackState<B::V>> {
    let pxz_t = b.transpose(&stats.cross_cov);
    let gain_t = b.solve_spd(&stats.innovation_cov, &pxz_t).map_err(|_| Error::SingularInnovation)?;
    let gain = b.transpose(&gain_t);
    let residual = b.sub(measurement_mean, &stats.predicted_measurement);
    let step = b.matmul(&gain, &residual);
    let mean = b.add(&pred.mean, &step);
    let shrink = b.matmul(&gain, &pxz_t);
    let raw = b.sub(&pred.cov, &shrink);
    let cov = project(b, &raw);
    ensure_finite(b, &mean)?;
    ensure_finite(b, &cov)?;
    Ok(TrackState { mean, cov })
}

pub fn update_extension<B: Backend>(
    b: &mut B,
    pred: &ExtensionState<B::V>,
    stats: &InnovationStats<B::V>,
    fs: &FrameStats,
    model: &NominalModel,
    comp: &Compensation<B::V>,
) -> Result<ExtensionState<B::V>> {
    let zbar = b.constant(fs.mean.clone());
    let residual = b.sub(&zbar, &stats.predicted_measurement);
    let dof = pred.dof + fs.count as f64;
    let raw = match model.update_rule {
        ExtensionUpdate::Direct => {
            let rt = b.transpose(&residual);
            let outer = b.matmul(&residual, &rt);
            let innov_term = b.matmul(&stats.extension_gain, &outer);
            // B⁻¹Z̃B⁻ᵀ·X⁻¹ = (X⁻¹·B⁻¹Z̃B⁻ᵀ)ᵀ for symmetric X and Z̃
            let b_inv = invert2(&model.distortion).ok_or(Error::SingularExtension)?;
            let whitened = b_inv.matmul(&fs.scatter).matmul(&b_inv.transpose());
            let w = b.constant(whitened);
            let xw = b.solve_spd(&pred.param, &w).map_err(|_| Error::SingularExtension)?;
            let scatter_term = b.transpose(&xw);
            let r1 = b.add(&pred.param, &innov_term);
            b.add(&r1, &scatter_term)
        }
        ExtensionUpdate::Whitened => {
            let lx = b.cholesky(&stats.extent).map_err(|_| Error::SingularExtension)?;
            let lxt = b.transpose(&lx);
            let ls = b.cholesky(&stats.innovation_cov).map_err(|_| Error::SingularInnovation)?;
            let w = b.solve_lower(&ls, &residual);
            let u = b.matmul(&lx, &w);
            let ut = b.transpose(&u);
            let n_hat = b.matmul(&u, &ut);

            let bm = b.constant(model.distortion.clone());
            let bt = b.constant(model.distortion.transpose());
            let bx = b.matmul(&bm, &stats.extent);
            let spread = b.matmul(&bx, &bt);
            let y = b.add(&spread, &comp.p_h);
            let ly = b.cholesky(&y).map_err(|_| Error::SingularExtension)?;
            let z = b.constant(fs.scatter.clone());
            let t1 = b.solve_lower(&ly, &z);
            let t1t = b.transpose(&t1);
            let t2 = b.solve_lower(&ly, &t1t);
            let lz = b.matmul(&lx, &t2);
            let z_hat = b.matmul(&lz, &lxt);

            let r1 = b.add(&pred.param, &n_hat);
            b.add(&r1, &z_hat)
        }
    };
    let param = project(b, &raw);
    ensure_finite(b, &param)?;
    Ok(ExtensionState { dof, param })
}

fn invert2(m: &Mat) -> Option<Mat> {
    let det = m.determinant2();
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(Mat::from_rows(&[[m[(1, 1)], -m[(0, 1)]], [-m[(1, 0)], m[(0, 0)]]]).scale(1.0 / det))
}

/// Prediction half of a step.
#[allow(clippy::type_complexity)]
pub fn predict<B: Backend>(
    b: &mut B,
    state: &TrackState<B::V>,
    ext: &ExtensionState<B::V>,
    model: &NominalModel,
    comp: &Compensation<B::V>,
) -> Result<(TrackState<B::V>, ExtensionState<B::V>)> {
    let pred = predict_state(b, state, model, comp)?;
    let ext_pred = predict_extension(b, ext, model, comp)?;
    Ok((pred, ext_pred))
}

/// Update half of a step.
#[allow(clippy::type_complexity)]
pub fn correct<B: Backend>(
    b: &mut B,
    pred: &TrackState<B::V>,
    ext_pred: &ExtensionState<B::V>,
    fs: &FrameStats,
    model: &NominalModel,
    comp: &Compensation<B::V>,
) -> Result<(TrackState<B::V>, ExtensionState<B::V>, InnovationStats<B::V>, B::V)> {
    let stats = innovation(b, pred, ext_pred, model, comp, fs.count)?;
    let zbar = b.constant(fs.mean.clone());
    let post = update_state(b, pred, &stats, &zbar)?;
    let ext_post = update_extension(b, ext_pred, &stats, fs, model, comp)?;
    let residual = b.sub(&zbar, &stats.predicted_measurement);
    Ok((post, ext_post, stats, residual))
}

/// Predict then update both branches with a given compensation.
#[allow(clippy::type_complexity)]
pub fn filter_step<B: Backend>(
    b: &mut B,
    state: &TrackState<B::V>,
    ext: &ExtensionState<B::V>,
    fs: &FrameStats,
    model: &NominalModel,
    comp: &Compensation<B::V>,
) -> Result<(TrackState<B::V>, ExtensionState<B::V>, StepDiagnostics<B::V>)> {
    let (pred, ext_pred) = predict(b, state, ext, model, comp)?;
    let (post, ext_post, innovation, residual) = correct(b, &pred, &ext_pred, fs, model, comp)?;
    let diag = StepDiagnostics { predicted: pred, predicted_extension: ext_pred, innovation, residual };
    Ok((post, ext_post, diag))
}

/// Track and extension beliefs from the first frame: centroid position, zero
/// velocity, and an extent matched to the scatter through `B⁻¹(·)B⁻ᵀ`.
pub fn init_track(
    first: &MeasurementFrame,
    cfg: &InitConfig,
    model: &NominalModel,
) -> Result<(TrackState, ExtensionState)> {
    let n = first.len();
    if n < 2 {
        return Err(Error::TooFewPoints { n });
    }
    if !(lambda_of(cfg.dof) > 0.0) {
        return Err(Error::BadDof { dof: cfg.dof });
    }
    let fs = frame_stats(first)?;
    let mut mean = Mat::zeros(STATE_DIM, 1);
    mean[(0, 0)] = fs.mean[(0, 0)];
    mean[(1, 0)] = fs.mean[(1, 0)];
    let cov = Mat::diag(&[cfg.pos_var, cfg.pos_var, cfg.vel_var, cfg.vel_var]);
    let sample_cov = fs.scatter.scale(1.0 / (n - 1) as f64);
    let b_inv = invert2(&model.distortion).ok_or(Error::InvalidConfig("distortion matrix must be invertible"))?;
    let extent = b_inv.matmul(&sample_cov).matmul(&b_inv.transpose());
    let extent = spd::symmetrize_project(&extent, cfg.min_extent);
    let param = extent.scale(lambda_of(cfg.dof));
    Ok((TrackState { mean, cov }, ExtensionState { dof: cfg.dof, param }))
}

/// Posterior track and extension per update step (frames 2..K).
#[derive(Clone, Debug, PartialEq)]
pub struct FilterRun {
    pub states: alloc::vec::Vec<TrackState>,
    pub extensions: alloc::vec::Vec<ExtensionState>,
}

/// Compensation-off filter over a whole sequence.
pub fn run_baseline(frames: &[MeasurementFrame], model: &NominalModel, init: &InitConfig) -> Result<FilterRun> {
    if frames.len() < 2 {
        return Err(Error::LengthMismatch { expected: 2, found: frames.len() });
    }
    let (mut state, mut ext) = init_track(&frames[0], init, model)?;
    let zero = Compensation::zero();
    let mut e = Eval;
    let mut run = FilterRun { states: alloc::vec::Vec::new(), extensions: alloc::vec::Vec::new() };
    for (k, frame) in frames.iter().enumerate().skip(1) {
        let fs = frame_stats(frame)?;
        let (s, x, _) = filter_step(&mut e, &state, &ext, &fs, model, &zero).map_err(|err| match err {
            Error::NonFinite => Error::NonFiniteAt { step: k },
            other => other,
        })?;
        run.states.push(s.clone());
        run.extensions.push(x.clone());
        state = s;
        ext = x;
    }
    Ok(run)
}
