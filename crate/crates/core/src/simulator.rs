//! Maneuvering elliptical-target scenarios: CV/CT regime switching, additive
//! state noise, and Poisson scatter frames drawn uniformly over the ellipse.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{MeasurementFrame, ScenarioConfig};
use crate::spd::{self, Mat};

/// The four (σ_w, σ_v) benchmark noise levels.
pub const NOISE_LEVELS: [(f64, f64); 4] = [(0.4, 0.6), (0.6, 0.8), (0.8, 1.0), (1.0, 1.2)];

/// Below this |ω·dt| the CT kinematics switch to their series expansion.
const SMALL_TURN: f64 = 1e-6;

/// Motion regime used to reach a ground-truth step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regime {
    ConstantVelocity,
    /// Coordinated turn with rate ω (rad/s).
    CoordinatedTurn(f64),
}

impl Regime {
    pub fn turn_rate(&self) -> f64 {
        match *self {
            Regime::ConstantVelocity => 0.0,
            Regime::CoordinatedTurn(w) => w,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthSequence {
    /// `[px, py, vx, vy]` per step.
    pub states: Vec<[f64; 4]>,
    /// Extent matrix per step; eigenvalues are the squared semi-axes.
    pub extents: Vec<Mat>,
    pub regimes: Vec<Regime>,
}

impl GroundTruthSequence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub truth: GroundTruthSequence,
    pub frames: Vec<MeasurementFrame>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub cases: Vec<Case>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn train_cases(&self) -> impl Iterator<Item = &Case> {
        self.train.iter().map(|&i| &self.cases[i])
    }

    pub fn test_cases(&self) -> impl Iterator<Item = &Case> {
        self.test.iter().map(|&i| &self.cases[i])
    }

    /// Case indices `0..train_cases` train, the rest test.
    pub fn default_split(config: &ScenarioConfig) -> (Vec<usize>, Vec<usize>) {
        ((0..config.train_cases).collect(), (config.train_cases..config.cases).collect())
    }
}

/// Coordinated-turn propagation; equals the CV transition when `ω = 0`.
pub fn ct_transition(x: &[f64; 4], omega: f64, dt: f64) -> [f64; 4] {
    let [px, py, vx, vy] = *x;
    let wt = omega * dt;
    // s = sin(ωdt)/ω, c = (1 − cos(ωdt))/ω
    let (s, c) = if libm::fabs(wt) < SMALL_TURN {
        (dt * (1.0 - wt * wt / 6.0), dt * wt / 2.0)
    } else {
        (libm::sin(wt) / omega, (1.0 - libm::cos(wt)) / omega)
    };
    let (sn, cs) = (libm::sin(wt), libm::cos(wt));
    [px + s * vx - c * vy, py + c * vx + s * vy, cs * vx - sn * vy, sn * vx + cs * vy]
}

/// `R(θ)·diag((a/2)², (b/2)²)·R(θ)ᵀ` for full axis lengths `a`, `b`.
pub fn oriented_extent(heading: f64, major_axis: f64, minor_axis: f64) -> Mat {
    let (s, c) = (libm::sin(heading), libm::cos(heading));
    let r = Mat::from_rows(&[[c, -s], [s, c]]);
    let (a, b) = (major_axis / 2.0, minor_axis / 2.0);
    let d = Mat::diag(&[a * a, b * b]);
    r.matmul(&d).matmul(&r.transpose()).symmetrize()
}

fn heading(x: &[f64; 4]) -> f64 {
    libm::atan2(x[3], x[2])
}

/// Random alternating CV/CT schedule covering at least `steps − 1` transitions.
pub fn random_schedule<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<(Regime, usize)> {
    let mut schedule = Vec::new();
    let mut covered = 0;
    let mut turning = rng.random_bool(0.5);
    while covered + 1 < cfg.steps {
        let len = rng.random_range(cfg.segment_min..=cfg.segment_max);
        let regime = if turning {
            let deg = rng.random_range(cfg.turn_rate_min_deg..=cfg.turn_rate_max_deg);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Regime::CoordinatedTurn(sign * deg.to_radians())
        } else {
            Regime::ConstantVelocity
        };
        schedule.push((regime, len));
        covered += len;
        turning = !turning;
    }
    schedule
}

/// Ground truth following an explicit regime schedule from `initial`.
///
/// Steps beyond the schedule continue in its last regime.
pub fn generate_trajectory_with_schedule<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    initial: [f64; 4],
    schedule: &[(Regime, usize)],
    rng: &mut R,
) -> GroundTruthSequence {
    let mut regimes_per_step = schedule.iter().flat_map(|&(r, n)| core::iter::repeat_n(r, n));
    let first = schedule.first().map_or(Regime::ConstantVelocity, |s| s.0);
    let mut last = first;
    let mut x = initial;
    let mut seq = GroundTruthSequence {
        states: Vec::with_capacity(cfg.steps),
        extents: Vec::with_capacity(cfg.steps),
        regimes: Vec::with_capacity(cfg.steps),
    };
    seq.states.push(x);
    seq.extents.push(oriented_extent(heading(&x), cfg.major_axis, cfg.minor_axis));
    seq.regimes.push(first);
    for _ in 1..cfg.steps {
        let regime = regimes_per_step.next().unwrap_or(last);
        last = regime;
        x = ct_transition(&x, regime.turn_rate(), cfg.dt);
        if cfg.sigma_w > 0.0 {
            for v in x.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += cfg.sigma_w * e;
            }
        }
        seq.states.push(x);
        seq.extents.push(oriented_extent(heading(&x), cfg.major_axis, cfg.minor_axis));
        seq.regimes.push(regime);
    }
    seq
}

/// Random start (uniform position in the area, uniform heading at the
/// configured speed) and a random regime schedule.
pub fn generate_trajectory<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> GroundTruthSequence {
    let px = rng.random_range(-cfg.area..=cfg.area);
    let py = rng.random_range(-cfg.area..=cfg.area);
    let th = rng.random_range(0.0..TAU);
    let initial = [px, py, cfg.speed * libm::cos(th), cfg.speed * libm::sin(th)];
    let schedule = random_schedule(cfg, rng);
    generate_trajectory_with_schedule(cfg, initial, &schedule, rng)
}

/// Poisson(rate) points, resampled until at least two, uniform over the solid
/// ellipse `{p : (p−c)ᵀE⁻¹(p−c) ≤ 1}` plus isotropic sensor noise.
pub fn generate_frame<R: Rng + ?Sized>(
    state: &[f64; 4],
    extent: &Mat,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<MeasurementFrame> {
    let poisson = Poisson::new(cfg.scatter_rate).map_err(|_| Error::InvalidConfig("scatter rate must be positive"))?;
    let mut n = 0usize;
    while n < 2 {
        n = poisson.sample(rng) as usize;
    }
    let floor = 1e-9 * libm::fabs(extent.trace()).max(1e-12);
    let l = spd::cholesky(&spd::symmetrize_project(extent, floor))?;
    let points = (0..n)
        .map(|_| {
            let r = libm::sqrt(rng.random::<f64>());
            let t = rng.random_range(0.0..TAU);
            let (u, v) = (r * libm::cos(t), r * libm::sin(t));
            let e0: f64 = StandardNormal.sample(rng);
            let e1: f64 = StandardNormal.sample(rng);
            [
                state[0] + l[(0, 0)] * u + cfg.sigma_v * e0,
                state[1] + l[(1, 0)] * u + l[(1, 1)] * v + cfg.sigma_v * e1,
            ]
        })
        .collect();
    MeasurementFrame::new(points)
}

/// Deterministic RNG for case `index` of a dataset seeded with `seed`.
pub fn case_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Case `index` of the dataset described by `cfg`; independent of every other case.
pub fn generate_case(cfg: &ScenarioConfig, index: usize) -> Result<Case> {
    let mut rng = case_rng(cfg.seed, index);
    let truth = generate_trajectory(cfg, &mut rng);
    let frames = truth
        .states
        .iter()
        .zip(&truth.extents)
        .map(|(x, e)| generate_frame(x, e, cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Case { truth, frames })
}

pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let cases = (0..cfg.cases).map(|i| generate_case(cfg, i)).collect::<Result<Vec<_>>>()?;
    let (train, test) = Dataset::default_split(cfg);
    Ok(Dataset { config: cfg.clone(), cases, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::cv_transition;

    fn quiet() -> ScenarioConfig {
        ScenarioConfig { sigma_w: 0.0, sigma_v: 0.0, steps: 31, ..ScenarioConfig::default() }
    }

    #[test]
    fn ct_limits_and_closed_form() {
        let x = [1.0, 2.0, 3.0, -4.0];
        let (cv, _) = cv_transition(&Mat::col(&x), 0.7);
        assert_eq!(ct_transition(&x, 0.0, 0.7).as_slice(), cv.data());

        let y = ct_transition(&[0.0, 0.0, 1.0, 0.0], core::f64::consts::FRAC_PI_2, 1.0);
        let two_over_pi = 2.0 / core::f64::consts::PI;
        assert!((y[0] - two_over_pi).abs() < 1e-12 && (y[1] - two_over_pi).abs() < 1e-12);
        assert!(y[2].abs() < 1e-12 && (y[3] - 1.0).abs() < 1e-12);

        // series branch is continuous with the closed form
        let w = 0.9e-6;
        let a = ct_transition(&x, w, 1.0);
        let (s, c) = (libm::sin(w) / w, (1.0 - libm::cos(w)) / w);
        let b = [x[0] + s * x[2] - c * x[3], x[1] + c * x[2] + s * x[3]];
        for i in 0..2 {
            assert!((a[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn ct_preserves_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = [0.0, 0.0, rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let y = ct_transition(&x, rng.random_range(-1.0..1.0), rng.random_range(0.1..3.0));
            let s0 = libm::hypot(x[2], x[3]);
            let s1 = libm::hypot(y[2], y[3]);
            assert!((s0 - s1).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_free_cv_is_linear() {
        let cfg = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = generate_trajectory_with_schedule(
            &cfg,
            [0.0, 0.0, 6.0, 8.0],
            &[(Regime::ConstantVelocity, 30)],
            &mut rng,
        );
        for (k, s) in seq.states.iter().enumerate() {
            assert!((s[0] - 6.0 * k as f64).abs() < 1e-9 && (s[1] - 8.0 * k as f64).abs() < 1e-9);
            assert!(seq.extents[k].max_abs_diff(&seq.extents[0]) < 1e-12);
        }
    }

    #[test]
    fn ninety_degree_turn_rotates_extent() {
        let cfg = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = 3f64.to_radians();
        let seq = generate_trajectory_with_schedule(
            &cfg,
            [0.0, 0.0, 10.0, 0.0],
            &[(Regime::CoordinatedTurn(w), 30)],
            &mut rng,
        );
        let last = seq.states[30];
        assert!(last[2].abs() < 1e-9 && (last[3] - 10.0).abs() < 1e-9);
        let expected = Mat::diag(&[1.0, 25.0]);
        assert!(seq.extents[30].max_abs_diff(&expected) < 1e-9);
        let (vals, _) = spd::sym_eigen(&seq.extents[17]).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-9 && (vals[1] - 25.0).abs() < 1e-9);
    }

    #[test]
    fn extent_follows_heading_under_noise_free_switching() {
        let cfg = ScenarioConfig { sigma_w: 0.0, ..ScenarioConfig::default() };
        let seq = generate_trajectory(&cfg, &mut ChaCha8Rng::seed_from_u64(12));
        assert_eq!(seq.len(), 140);
        for (x, e) in seq.states.iter().zip(&seq.extents) {
            assert!(e.max_abs_diff(&oriented_extent(heading(x), 10.0, 2.0)) < 1e-12);
            assert!((libm::hypot(x[2], x[3]) - 10.0).abs() < 1e-9);
        }
        assert!(seq.regimes.iter().any(|r| matches!(r, Regime::CoordinatedTurn(_))));
        assert!(seq.regimes.contains(&Regime::ConstantVelocity));
    }

    #[test]
    fn schedule_respects_ranges() {
        let cfg = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s = random_schedule(&cfg, &mut rng);
            assert!(s.iter().map(|x| x.1).sum::<usize>() >= cfg.steps - 1);
            for pair in s.windows(2) {
                let kinds = (matches!(pair[0].0, Regime::ConstantVelocity), matches!(pair[1].0, Regime::ConstantVelocity));
                assert!(kinds.0 != kinds.1);
            }
            for (r, n) in s {
                assert!((10..=40).contains(&n));
                let w = libm::fabs(r.turn_rate()).to_degrees();
                assert!(matches!(r, Regime::ConstantVelocity) || (1.0..=5.0).contains(&w));
            }
        }
    }

    #[test]
    fn uniform_ellipse_moments() {
        let cfg = ScenarioConfig { sigma_v: 0.0, scatter_rate: 50.0, ..ScenarioConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let extent = oriented_extent(0.0, 10.0, 2.0);
        let mut pts = Vec::new();
        while pts.len() < 100_000 {
            pts.extend_from_slice(generate_frame(&[0.0; 4], &extent, &cfg, &mut rng).unwrap().points());
        }
        let n = pts.len() as f64;
        let sxx = pts.iter().map(|p| p[0] * p[0]).sum::<f64>() / n;
        let syy = pts.iter().map(|p| p[1] * p[1]).sum::<f64>() / n;
        assert!((sxx / 6.25 - 1.0).abs() < 0.03, "{sxx}");
        assert!((syy / 0.25 - 1.0).abs() < 0.03, "{syy}");
        for p in &pts {
            assert!(p[0] * p[0] / 25.0 + p[1] * p[1] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn poisson_counts_and_floor() {
        let cfg = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = oriented_extent(0.3, 10.0, 2.0);
        let total: usize = (0..10_000).map(|_| generate_frame(&[0.0; 4], &e, &cfg, &mut rng).unwrap().len()).sum();
        assert!((total as f64 / 10_000.0 / 20.0 - 1.0).abs() < 0.02);

        let sparse = ScenarioConfig { scatter_rate: 0.5, ..ScenarioConfig::default() };
        let flat = Mat::zeros(2, 2);
        for _ in 0..200 {
            let f = generate_frame(&[1.0, 1.0, 0.0, 0.0], &flat, &sparse, &mut rng).unwrap();
            assert!(f.len() >= 2);
        }
    }

    #[test]
    fn dataset_is_deterministic_and_split() {
        let cfg = ScenarioConfig { cases: 10, train_cases: 8, steps: 20, seed: 42, ..ScenarioConfig::default() };
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.test.len()), (8, 2));
        assert_eq!(a.cases[3], generate_case(&cfg, 3).unwrap());
        assert_ne!(a.cases[0].truth, a.cases[1].truth);
        let other = generate_dataset(&ScenarioConfig { seed: 43, ..cfg.clone() }).unwrap();
        assert_ne!(a.cases[0], other.cases[0]);
        for c in &a.cases {
            assert_eq!(c.frames.len(), 20);
        }
    }

    #[test]
    fn turn_segments_have_correlated_heading_increments() {
        let cfg = ScenarioConfig { sigma_w: 0.0, steps: 400, ..ScenarioConfig::default() };
        let seq = generate_trajectory(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let inc: Vec<f64> = seq.states.windows(2).map(|w| heading(&w[1]) - heading(&w[0])).map(|d| {
            libm::remainder(d, TAU)
        }).collect();
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let c0: f64 = inc.iter().map(|v| (v - mean).powi(2)).sum();
        let c1: f64 = inc.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        assert!(c1 / c0 > 0.5);
    }
}
