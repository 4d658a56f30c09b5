//! Beliefs, measurements and the nominal planar models.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::Backend;
use crate::error::{Error, Result};
use crate::spd::Mat;

/// Kinematic state `[px, py, vx, vy]`.
pub const STATE_DIM: usize = 4;
/// Position measurement `[px, py]`.
pub const MEAS_DIM: usize = 2;
/// Extension matrices are 2×2 (planar targets).
pub const EXT_DIM: usize = 2;

/// Gaussian kinematic belief. `V` is a backend handle; plain code uses [`Mat`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrackState<V = Mat> {
    /// 4×1 mean (m, m/s).
    pub mean: V,
    /// 4×4 covariance.
    pub cov: V,
}

impl TrackState {
    pub fn new(mean: [f64; 4], cov: Mat) -> Self {
        TrackState { mean: Mat::col(&mean), cov }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.mean[(0, 0)], self.mean[(1, 0)]]
    }
}

/// Inverse-Wishart extension belief with degrees of freedom `dof` and
/// parameter matrix `param`. The point extent is `param / (dof − 6)`.
///
/// `dof` never depends on learned quantities, so it stays a plain number.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtensionState<V = Mat> {
    pub dof: f64,
    pub param: V,
}

impl ExtensionState {
    /// `dof − 2d − 2`.
    pub fn lambda(&self) -> f64 {
        self.dof - 2.0 * EXT_DIM as f64 - 2.0
    }
}

/// Scatter points received in one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementFrame {
    points: Vec<[f64; 2]>,
}

impl MeasurementFrame {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyFrame);
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(MeasurementFrame { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sufficient statistics of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStats {
    /// 2×1 centroid z̃.
    pub mean: Mat,
    /// Unnormalised 2×2 scatter Z̃ = Σ (zᵢ − z̃)(zᵢ − z̃)ᵀ.
    pub scatter: Mat,
    pub count: usize,
}

pub fn frame_stats(frame: &MeasurementFrame) -> Result<FrameStats> {
    let n = frame.points.len();
    if n == 0 {
        return Err(Error::EmptyFrame);
    }
    let inv_n = 1.0 / n as f64;
    let cx = frame.points.iter().map(|p| p[0]).sum::<f64>() * inv_n;
    let cy = frame.points.iter().map(|p| p[1]).sum::<f64>() * inv_n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &frame.points {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    Ok(FrameStats {
        mean: Mat::col(&[cx, cy]),
        scatter: Mat::from_rows(&[[sxx, sxy], [sxy, syy]]),
        count: n,
    })
}

/// A state transition `x ↦ f(x)` with its Jacobian.
pub trait StateFunction: Send + Sync + fmt::Debug {
    fn eval(&self, x: &Mat) -> (Mat, Mat);
}

/// A measurement function `x ↦ h(x)` with its Jacobian.
pub trait MeasurementFunction: Send + Sync + fmt::Debug {
    fn eval(&self, x: &Mat) -> (Mat, Mat);
}

fn cv_matrix(dt: f64) -> Mat {
    Mat::from_rows(&[
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Constant-velocity transition: positions advance by `dt · velocity`.
pub fn cv_transition(x: &Mat, dt: f64) -> (Mat, Mat) {
    let f = cv_matrix(dt);
    (f.matmul(x), f)
}

/// Position selector `h(x) = [px, py]`.
pub fn linear_measurement(x: &Mat) -> (Mat, Mat) {
    let h = Mat::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
    (h.matmul(x), h)
}

/// Discretised white-acceleration noise for the CV model, per axis
/// `σ² · [[dt⁴/4, dt³/2], [dt³/2, dt²]]`.
pub fn cv_process_noise(sigma_w: f64, dt: f64) -> Result<Mat> {
    if !(sigma_w > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidConfig("process noise needs sigma_w > 0 and dt > 0"));
    }
    let s2 = sigma_w * sigma_w;
    let (a, b, c) = (dt * dt * dt * dt / 4.0 * s2, dt * dt * dt / 2.0 * s2, dt * dt * s2);
    Ok(Mat::from_rows(&[
        [a, 0.0, b, 0.0],
        [0.0, a, 0.0, b],
        [b, 0.0, c, 0.0],
        [0.0, b, 0.0, c],
    ]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantVelocity {
    pub dt: f64,
}

impl StateFunction for ConstantVelocity {
    fn eval(&self, x: &Mat) -> (Mat, Mat) {
        cv_transition(x, self.dt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionMeasurement;

impl MeasurementFunction for PositionMeasurement {
    fn eval(&self, x: &Mat) -> (Mat, Mat) {
        linear_measurement(x)
    }
}

/// How the extension parameter matrix is carried through the prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtensionTransition {
    /// `((v⁻ − 6)/λ) · (δ·A·X·Aᵀ + Pφ)`; the point extent grows by δ per step.
    Scaled,
    /// The bracket divided by δ, keeping the point extent unchanged when
    /// `A = I` and `Pφ = 0`.
    MeanPreserving,
}

/// How the extension parameter matrix absorbs a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtensionUpdate {
    /// `X⁻ + S⁻¹·ννᵀ + B⁻¹Z̃B⁻ᵀ·X⁻⁻¹`, then projected to SPD.
    Direct,
    /// `X⁻ + N̂ + Ẑ` with innovation and scatter whitened through Cholesky
    /// factors of the innovation covariance and the per-point spread.
    Whitened,
}

/// Nominal first-order model consumed by the filter.
#[derive(Clone, Debug)]
pub struct NominalModel {
    pub transition: Arc<dyn StateFunction>,
    pub measurement: Arc<dyn MeasurementFunction>,
    /// Q, 4×4 SPD.
    pub process_noise: Mat,
    /// B, 2×2 invertible. Per-point spread is `B·X·Bᵀ`.
    pub distortion: Mat,
    /// A, 2×2.
    pub extension_transition: Mat,
    /// Wishart transition degrees of freedom δ.
    pub delta: f64,
    pub transition_rule: ExtensionTransition,
    pub update_rule: ExtensionUpdate,
}

impl NominalModel {
    /// CV motion, position measurements, `B = A = I`, `δ = 7`.
    pub fn constant_velocity(dt: f64, sigma_w: f64) -> Result<Self> {
        Ok(NominalModel {
            transition: Arc::new(ConstantVelocity { dt }),
            measurement: Arc::new(PositionMeasurement),
            process_noise: cv_process_noise(sigma_w, dt)?,
            distortion: Mat::identity(EXT_DIM),
            extension_transition: Mat::identity(EXT_DIM),
            delta: 7.0,
            transition_rule: ExtensionTransition::MeanPreserving,
            update_rule: ExtensionUpdate::Whitened,
        })
    }

    pub fn with_distortion(mut self, b: Mat) -> Self {
        self.distortion = b;
        self
    }

    pub fn with_rules(mut self, transition: ExtensionTransition, update: ExtensionUpdate) -> Self {
        self.transition_rule = transition;
        self.update_rule = update;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.process_noise.shape() != (STATE_DIM, STATE_DIM)
            || self.distortion.shape() != (EXT_DIM, EXT_DIM)
            || self.extension_transition.shape() != (EXT_DIM, EXT_DIM)
        {
            return Err(Error::ShapeMismatch);
        }
        // the white-acceleration Q is rank deficient, so only PSD is required
        let (vals, _) = crate::spd::sym_eigen(&self.process_noise)?;
        let tol = 1e-12 * self.process_noise.trace().abs().max(1.0);
        if vals.iter().any(|v| *v < -tol) || self.process_noise.max_abs_diff(&self.process_noise.transpose()) > tol {
            return Err(Error::NotPositiveDefinite);
        }
        if self.distortion.determinant2() == 0.0 {
            return Err(Error::InvalidConfig("distortion matrix must be invertible"));
        }
        if !(self.delta > EXT_DIM as f64 - 1.0) {
            return Err(Error::InvalidConfig("delta must exceed d - 1"));
        }
        Ok(())
    }
}

/// Plain-data description of a [`NominalModel`] with CV motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub dt: f64,
    /// Acceleration noise σ used to build Q.
    pub sigma_w: f64,
    /// B = `distortion · I`.
    pub distortion: f64,
    pub delta: f64,
    pub transition_rule: ExtensionTransition,
    pub update_rule: ExtensionUpdate,
}

impl Default for ModelConfig {
    /// Points drawn uniformly from an ellipse with extent E have covariance
    /// E/4, hence the default `B = I/2`.
    fn default() -> Self {
        ModelConfig {
            dt: 1.0,
            sigma_w: 0.4,
            distortion: 0.5,
            delta: 7.0,
            transition_rule: ExtensionTransition::MeanPreserving,
            update_rule: ExtensionUpdate::Whitened,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<NominalModel> {
        let mut m = NominalModel::constant_velocity(self.dt, self.sigma_w)?
            .with_distortion(Mat::identity(EXT_DIM).scale(self.distortion))
            .with_rules(self.transition_rule, self.update_rule);
        m.delta = self.delta;
        m.validate()?;
        Ok(m)
    }
}

/// Learned mismatch moments entering the filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Compensation<V = Mat> {
    /// Δf, 4×1.
    pub delta_f: V,
    /// Pf, 4×4 PSD.
    pub p_f: V,
    /// Δh, 2×1.
    pub delta_h: V,
    /// Ph, 2×2 PSD.
    pub p_h: V,
    /// Pφ, 2×2 PSD.
    pub p_phi: V,
}

impl Compensation {
    pub fn zero() -> Self {
        Compensation {
            delta_f: Mat::zeros(STATE_DIM, 1),
            p_f: Mat::zeros(STATE_DIM, STATE_DIM),
            delta_h: Mat::zeros(MEAS_DIM, 1),
            p_h: Mat::zeros(MEAS_DIM, MEAS_DIM),
            p_phi: Mat::zeros(EXT_DIM, EXT_DIM),
        }
    }
}

impl<V: Clone> Compensation<V> {
    /// Lifts a plain compensation into backend handles.
    pub fn on<B: Backend<V = V>>(b: &mut B, c: &Compensation) -> Self {
        Compensation {
            delta_f: b.constant(c.delta_f.clone()),
            p_f: b.constant(c.p_f.clone()),
            delta_h: b.constant(c.delta_h.clone()),
            p_h: b.constant(c.p_h.clone()),
            p_phi: b.constant(c.p_phi.clone()),
        }
    }
}

/// Scenario generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    /// Sequence length K.
    pub steps: usize,
    pub dt: f64,
    /// Additive state noise σ_w (all four components).
    pub sigma_w: f64,
    /// Per-point sensor noise σ_v.
    pub sigma_v: f64,
    /// Full ellipse axis lengths (m); semi-axes are half of these.
    pub major_axis: f64,
    pub minor_axis: f64,
    pub speed: f64,
    /// Poisson mean of scatter points per frame.
    pub scatter_rate: f64,
    pub cases: usize,
    pub train_cases: usize,
    /// CT turn-rate magnitude range (deg/s).
    pub turn_rate_min_deg: f64,
    pub turn_rate_max_deg: f64,
    /// Regime segment length range (steps, inclusive).
    pub segment_min: usize,
    pub segment_max: usize,
    /// Initial positions are uniform in `[-area, area]²`.
    pub area: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            steps: 140,
            dt: 1.0,
            sigma_w: 0.4,
            sigma_v: 0.6,
            major_axis: 10.0,
            minor_axis: 2.0,
            speed: 10.0,
            scatter_rate: 20.0,
            cases: 600,
            train_cases: 480,
            turn_rate_min_deg: 1.0,
            turn_rate_max_deg: 5.0,
            segment_min: 10,
            segment_max: 40,
            area: 500.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.dt, self.major_axis, self.minor_axis, self.speed, self.scatter_rate];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("dt, axes, speed and scatter rate must be positive"));
        }
        if self.sigma_w < 0.0 || self.sigma_v < 0.0 {
            return Err(Error::InvalidConfig("noise levels must be non-negative"));
        }
        if self.steps < 2 {
            return Err(Error::InvalidConfig("steps must be at least 2"));
        }
        if self.cases == 0 || self.train_cases > self.cases {
            return Err(Error::InvalidConfig("need cases > 0 and train_cases <= cases"));
        }
        if self.turn_rate_min_deg > self.turn_rate_max_deg || self.turn_rate_min_deg < 0.0 {
            return Err(Error::InvalidConfig("turn-rate range is inverted or negative"));
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return Err(Error::InvalidConfig("segment range must satisfy 1 <= min <= max"));
        }
        Ok(())
    }
}
