//! Position RMSE, ellipse IoU and Gaussian Wasserstein distance, and their
//! aggregation over a set of tracked cases.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use crate::autodiff::Eval;
use crate::error::{Error, Result};
use crate::filter::{extension_mean, FilterRun};
use crate::simulator::GroundTruthSequence;
use crate::spd::{self, Mat};

/// Vertices per ellipse in the IoU polygonisation.
pub const POLYGON_ORDER: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EllipseEstimate {
    pub center: [f64; 2],
    /// Extent matrix; eigenvalues are the squared semi-axes.
    pub extent: Mat,
}

impl EllipseEstimate {
    pub fn new(center: [f64; 2], extent: Mat) -> Self {
        EllipseEstimate { center, extent }
    }
}

/// Per-step Euclidean errors plus the squared-error mean and its root.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionErrors {
    pub per_step: Vec<f64>,
    pub mean_squared: f64,
    pub rmse: f64,
}

pub fn position_rmse(estimates: &[[f64; 2]], truths: &[[f64; 2]]) -> Result<PositionErrors> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch { expected: truths.len(), found: estimates.len() });
    }
    let per_step: Vec<f64> =
        estimates.iter().zip(truths).map(|(e, t)| libm::hypot(e[0] - t[0], e[1] - t[1])).collect();
    let mean_squared = if per_step.is_empty() {
        0.0
    } else {
        per_step.iter().map(|e| e * e).sum::<f64>() / per_step.len() as f64
    };
    Ok(PositionErrors { per_step, mean_squared, rmse: libm::sqrt(mean_squared) })
}

/// Counter-clockwise polygon inscribed in the ellipse boundary.
fn polygon(e: &EllipseEstimate) -> Result<Vec<[f64; 2]>> {
    let s = spd::sym_sqrt(&e.extent)?;
    Ok((0..POLYGON_ORDER)
        .map(|i| {
            let t = TAU * i as f64 / POLYGON_ORDER as f64;
            let (u, v) = (libm::cos(t), libm::sin(t));
            [e.center[0] + s[(0, 0)] * u + s[(0, 1)] * v, e.center[1] + s[(1, 0)] * u + s[(1, 1)] * v]
        })
        .collect())
}

fn area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    }).sum();
    twice / 2.0
}

fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Sutherland–Hodgman clipping of `subject` by the convex CCW polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let input = core::mem::take(&mut out);
        let n = input.len();
        for j in 0..n {
            let (p, q) = (input[j], input[(j + 1) % n]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Area intersection-over-union of two solid ellipses `(p−c)ᵀE⁻¹(p−c) ≤ 1`.
pub fn iou_ellipse(a: &EllipseEstimate, b: &EllipseEstimate) -> Result<f64> {
    let pa = polygon(a)?;
    let pb = polygon(b)?;
    let (area_a, area_b) = (area(&pa), area(&pb));
    let inter = area(&clip_convex(&pa, &pb)).max(0.0);
    let union = area_a + area_b - inter;
    if !(union > 0.0) {
        return Ok(if area_a == area_b && a.center == b.center { 1.0 } else { 0.0 });
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Squared 2-Wasserstein distance between the Gaussians `(c, E)`.
pub fn gwd(a: &EllipseEstimate, b: &EllipseEstimate) -> Result<f64> {
    let (dx, dy) = (a.center[0] - b.center[0], a.center[1] - b.center[1]);
    let dc = dx * dx + dy * dy;
    let sa = spd::sym_sqrt(&a.extent)?;
    let cross = spd::sym_sqrt(&sa.matmul(&b.extent).matmul(&sa).symmetrize())?;
    let value = dc + a.extent.trace() + b.extent.trace() - 2.0 * cross.trace();
    if !value.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(value.max(0.0))
}

/// Per-step series for one tracked case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseMetrics {
    pub position_error: Vec<f64>,
    pub iou: Vec<f64>,
    pub gwd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub cases: Vec<CaseMetrics>,
    /// Mean over cases and steps of the squared position error (m²).
    pub mean_squared_error: f64,
    /// Square root of `mean_squared_error` (m).
    pub rmse: f64,
    pub mean_iou: f64,
    pub mean_gwd: f64,
    /// Largest single-step position error (m).
    pub peak_position_error: f64,
    /// Smallest single-step IoU.
    pub min_iou: f64,
    pub max_gwd: f64,
}

impl MetricsReport {
    /// Per-step RMSE across cases (root of the per-step mean squared error).
    pub fn step_rmse(&self) -> Vec<f64> {
        self.step_mean(|c| &c.position_error, |e| e * e).into_iter().map(libm::sqrt).collect()
    }

    pub fn step_iou(&self) -> Vec<f64> {
        self.step_mean(|c| &c.iou, |v| v)
    }

    pub fn step_gwd(&self) -> Vec<f64> {
        self.step_mean(|c| &c.gwd, |v| v)
    }

    fn step_mean(&self, series: impl Fn(&CaseMetrics) -> &Vec<f64>, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let steps = self.cases.first().map_or(0, |c| series(c).len());
        let n = self.cases.len() as f64;
        (0..steps).map(|k| self.cases.iter().map(|c| f(series(c)[k])).sum::<f64>() / n).collect()
    }
}

/// Score one case: posterior `i` of the run is compared with truth step `i + 1`
/// (the first frame only initialises the track).
pub fn evaluate_case(truth: &GroundTruthSequence, run: &FilterRun) -> Result<CaseMetrics> {
    if run.states.len() + 1 != truth.len() || run.extensions.len() != run.states.len() {
        return Err(Error::ShapeMismatch);
    }
    let mut e = Eval;
    let estimates: Vec<[f64; 2]> = run.states.iter().map(|s| s.position()).collect();
    let truths: Vec<[f64; 2]> = truth.states[1..].iter().map(|s| [s[0], s[1]]).collect();
    let position_error = position_rmse(&estimates, &truths)?.per_step;
    let mut iou = Vec::with_capacity(estimates.len());
    let mut gwds = Vec::with_capacity(estimates.len());
    for (k, ext) in run.extensions.iter().enumerate() {
        let est = EllipseEstimate::new(estimates[k], extension_mean(&mut e, ext)?);
        let tru = EllipseEstimate::new(truths[k], truth.extents[k + 1].clone());
        iou.push(iou_ellipse(&est, &tru)?);
        gwds.push(gwd(&est, &tru)?);
    }
    Ok(CaseMetrics { position_error, iou, gwd: gwds })
}

pub fn aggregate(cases: Vec<CaseMetrics>) -> Result<MetricsReport> {
    let steps = cases.first().map_or(0, |c| c.position_error.len());
    if cases.is_empty() || steps == 0 {
        return Err(Error::EmptyDataset);
    }
    if cases.iter().any(|c| c.position_error.len() != steps || c.iou.len() != steps || c.gwd.len() != steps) {
        return Err(Error::ShapeMismatch);
    }
    let total = (cases.len() * steps) as f64;
    let all = |f: fn(&CaseMetrics) -> &Vec<f64>| cases.iter().flat_map(move |c| f(c).iter().copied());
    let mean_squared_error = all(|c| &c.position_error).map(|e| e * e).sum::<f64>() / total;
    let mean_iou = all(|c| &c.iou).sum::<f64>() / total;
    let mean_gwd = all(|c| &c.gwd).sum::<f64>() / total;
    let peak_position_error = all(|c| &c.position_error).fold(0.0, f64::max);
    let min_iou = all(|c| &c.iou).fold(1.0, f64::min);
    let max_gwd = all(|c| &c.gwd).fold(0.0, f64::max);
    Ok(MetricsReport {
        mean_squared_error,
        rmse: libm::sqrt(mean_squared_error),
        mean_iou,
        mean_gwd,
        peak_position_error,
        min_iou,
        max_gwd,
        cases,
    })
}

/// Score a set of runs against their ground truths.
pub fn evaluate_run(truths: &[&GroundTruthSequence], runs: &[FilterRun]) -> Result<MetricsReport> {
    if truths.len() != runs.len() {
        return Err(Error::ShapeMismatch);
    }
    let cases = truths.iter().zip(runs).map(|(t, r)| evaluate_case(t, r)).collect::<Result<Vec<_>>>()?;
    aggregate(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ExtensionState, TrackState};
    use crate::simulator::Regime;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ell(c: [f64; 2], e: Mat) -> EllipseEstimate {
        EllipseEstimate::new(c, e)
    }

    fn random_spd(rng: &mut ChaCha8Rng) -> Mat {
        let t = rng.random_range(0.0..TAU);
        let (s, c) = (libm::sin(t), libm::cos(t));
        let r = Mat::from_rows(&[[c, -s], [s, c]]);
        let d = Mat::diag(&[rng.random_range(0.1..10.0), rng.random_range(0.1..10.0)]);
        r.matmul(&d).matmul(&r.transpose()).symmetrize()
    }

    #[test]
    fn rmse_examples() {
        let t = [[0.0, 0.0], [1.0, 1.0]];
        assert_eq!(position_rmse(&t, &t).unwrap().rmse, 0.0);
        let off = position_rmse(&[[3.0, 4.0], [4.0, 5.0]], &t).unwrap();
        assert_eq!(off.per_step, [5.0, 5.0]);
        let mixed = position_rmse(&[[0.0, 0.0], [4.0, 5.0]], &t).unwrap();
        assert_eq!(mixed.mean_squared, 12.5);
        assert_eq!(mixed.rmse, libm::sqrt(12.5));
        assert!(matches!(position_rmse(&t[..1], &t), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn iou_examples() {
        let a = ell([1.0, 2.0], Mat::diag(&[25.0, 1.0]));
        assert!((iou_ellipse(&a, &a).unwrap() - 1.0).abs() < 1e-3);
        let far = ell([101.0, 2.0], Mat::identity(2));
        assert_eq!(iou_ellipse(&ell([1.0, 2.0], Mat::identity(2)), &far).unwrap(), 0.0);
        let small = ell([0.0, 0.0], Mat::identity(2));
        let big = ell([0.0, 0.0], Mat::identity(2).scale(4.0));
        assert!((iou_ellipse(&small, &big).unwrap() - 0.25).abs() < 1e-3);
    }

    #[test]
    fn iou_matches_monte_carlo_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = ell([0.0, 0.0], Mat::from_rows(&[[9.0, 2.0], [2.0, 3.0]]));
        let b = ell([1.0, 0.5], Mat::diag(&[10.0, 0.1]));
        let inside = |e: &EllipseEstimate, p: [f64; 2]| {
            let inv = spd::inverse_spd(&e.extent).unwrap();
            let d = [p[0] - e.center[0], p[1] - e.center[1]];
            inv[(0, 0)] * d[0] * d[0] + 2.0 * inv[(0, 1)] * d[0] * d[1] + inv[(1, 1)] * d[1] * d[1] <= 1.0
        };
        let (mut both, mut either) = (0u32, 0u32);
        for _ in 0..1_000_000 {
            let p = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let (ia, ib) = (inside(&a, p), inside(&b, p));
            both += (ia && ib) as u32;
            either += (ia || ib) as u32;
        }
        let mc = both as f64 / either as f64;
        assert!((iou_ellipse(&a, &b).unwrap() - mc).abs() < 3e-3);
    }

    #[test]
    fn iou_symmetric_and_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = ell([rng.random_range(-2.0..2.0), 0.0], random_spd(&mut rng));
            let b = ell([0.0, rng.random_range(-2.0..2.0)], random_spd(&mut rng));
            let ab = iou_ellipse(&a, &b).unwrap();
            assert!((ab - iou_ellipse(&b, &a).unwrap()).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&ab));
            let t: f64 = rng.random_range(0.0..TAU);
            let r = Mat::from_rows(&[[t.cos(), -t.sin()], [t.sin(), t.cos()]]);
            let shift = [5.0, -7.0];
            let mv = |e: &EllipseEstimate| {
                let c = r.matmul(&Mat::col(&e.center));
                ell([c[(0, 0)] + shift[0], c[(1, 0)] + shift[1]], r.matmul(&e.extent).matmul(&r.transpose()))
            };
            // rotation shifts the polygon vertices, so allow polygonisation error
            assert!((ab - iou_ellipse(&mv(&a), &mv(&b)).unwrap()).abs() < 2e-3);
        }
    }

    #[test]
    fn gwd_examples() {
        let a = ell([1.0, 1.0], Mat::from_rows(&[[3.0, 1.0], [1.0, 2.0]]));
        assert!(gwd(&a, &a).unwrap() < 1e-9);
        let d = gwd(&ell([0.0, 0.0], Mat::diag(&[4.0, 1.0])), &ell([0.0, 0.0], Mat::diag(&[1.0, 4.0]))).unwrap();
        assert!((d - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gwd_commuting_and_center_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let l = [rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)];
            let m = [rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)];
            let c = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = ell([0.0, 0.0], Mat::diag(&l));
            let b = ell(c, Mat::diag(&m));
            let expected = (0..2).map(|i| (libm::sqrt(l[i]) - libm::sqrt(m[i])).powi(2)).sum::<f64>()
                + c[0] * c[0]
                + c[1] * c[1];
            assert!((gwd(&a, &b).unwrap() - expected).abs() < 1e-9);

            let e = random_spd(&mut rng);
            let base = gwd(&ell([0.0, 0.0], e.clone()), &ell([0.0, 0.0], e.clone())).unwrap();
            let moved = gwd(&ell([0.0, 0.0], e.clone()), &ell(c, e.clone())).unwrap();
            assert!((moved - base - (c[0] * c[0] + c[1] * c[1])).abs() < 1e-9);
        }
    }

    #[test]
    fn gwd_symmetric_and_root_is_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let mut draw = || ell([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], random_spd(&mut rng));
            let (a, b, c) = (draw(), draw(), draw());
            let ab = gwd(&a, &b).unwrap();
            assert!((ab - gwd(&b, &a).unwrap()).abs() < 1e-9);
            let (dab, dbc, dac) = (libm::sqrt(ab), libm::sqrt(gwd(&b, &c).unwrap()), libm::sqrt(gwd(&a, &c).unwrap()));
            assert!(dac <= dab + dbc + 1e-6);
        }
    }

    fn truth(n: usize) -> GroundTruthSequence {
        GroundTruthSequence {
            states: (0..n).map(|k| [k as f64, 0.0, 1.0, 0.0]).collect(),
            extents: (0..n).map(|_| Mat::diag(&[25.0, 1.0])).collect(),
            regimes: alloc::vec![Regime::ConstantVelocity; n],
        }
    }

    fn perfect_run(t: &GroundTruthSequence) -> FilterRun {
        FilterRun {
            states: t.states[1..].iter().map(|s| TrackState::new(*s, Mat::identity(4))).collect(),
            extensions: t.extents[1..].iter().map(|e| ExtensionState { dof: 16.0, param: e.scale(10.0) }).collect(),
        }
    }

    #[test]
    fn perfect_run_scores() {
        let t = truth(6);
        let r = evaluate_run(&[&t, &t], &[perfect_run(&t), perfect_run(&t)]).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert!((r.mean_iou - 1.0).abs() < 1e-3);
        assert!(r.mean_gwd < 1e-9);
        assert_eq!(r.step_rmse().len(), 5);
        assert_eq!(r, evaluate_run(&[&t, &t], &[perfect_run(&t), perfect_run(&t)]).unwrap());
    }

    #[test]
    fn peaks_and_shape_checks() {
        let t = truth(4);
        let mut run = perfect_run(&t);
        run.states[1].mean[(0, 0)] += 3.0;
        let r = evaluate_run(&[&t], &[run.clone()]).unwrap();
        assert_eq!(r.peak_position_error, 3.0);
        assert!(r.min_iou < 0.7);
        assert!((r.max_gwd - 9.0).abs() < 1e-9);
        assert!((r.mean_squared_error - 3.0).abs() < 1e-12);
        run.states.pop();
        assert_eq!(evaluate_run(&[&t], &[run]), Err(Error::ShapeMismatch));
    }
}
