//! Two-stage least-squares estimation of `(A, B, K)` from trace-distance
//! curves.
//!
//! Stage one fits `A·exp(−B·x²)` to the samples taken while only arm 1 is
//! active. Stage two keeps `(A, B)` and fits `|K|` in
//! `A·exp(−B(s² + (x−s)² − 2|K|·s·(x−s)))` to the samples after the split
//! point `s`. Internally `B` is carried as `u = B·s²` so that all parameters
//! are of order one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{TraceDistanceTrajectory, TracePoint};
use crate::error::{Error, Result};
use crate::schedule::{PlateSchedule, ARM_MAX};

const MAX_ITERATIONS: usize = 200;
const STEP_TOL: f64 = 1e-10;
const A_MIN: f64 = 1e-12;
const A_MAX: f64 = 1.5;
const MIN_POINTS_PER_STAGE: usize = 4;

/// Fits with `u = B·s²` at or below this are flagged degenerate: the curve
/// has not decayed and carries no information on `K`.
pub const DEGENERATE_U: f64 = 1e-9;

/// Error bars below this are raised to it when weighting.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Result of [`fit_consecutive`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub a: f64,
    /// Decay coefficient per λ₀².
    pub b: f64,
    /// Correlation coefficient, reported non-positive. `None` when degenerate.
    pub k: Option<f64>,
    /// Residual-based standard error of `k`, conditional on `(A, B)`.
    pub k_stderr: Option<f64>,
    /// Residual sum of squares over both stages (weighted when error bars
    /// are present).
    pub rss: f64,
    pub n_points: usize,
    pub degenerate: bool,
}

impl FitResult {
    /// The correlation coefficient, or [`Error::DegenerateFit`].
    pub fn k(&self) -> Result<f64> {
        self.k.ok_or(Error::DegenerateFit)
    }

    pub fn to_json(&self) -> FitResultJson {
        FitResultJson {
            a: self.a,
            b_per_lambda0_sq: self.b,
            k: self.k,
            rss: self.rss,
            n_points: self.n_points,
            degenerate_flag: self.degenerate,
        }
    }

    /// Model value at `(x1, x2)`: `A·exp(−B(x1² + x2² − 2|K|x1x2))`.
    pub fn predict(&self, x1: f64, x2: f64) -> Result<f64> {
        let k = self.k()?;
        Ok(self.a * (-self.b * (x1 * x1 + x2 * x2 - 2.0 * k.abs() * x1 * x2)).exp())
    }
}

/// Exported shape of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitResultJson {
    pub a: f64,
    pub b_per_lambda0_sq: f64,
    pub k: Option<f64>,
    pub rss: f64,
    pub n_points: usize,
    pub degenerate_flag: bool,
}

struct Solution {
    params: Vec<f64>,
    rss: f64,
    /// `(JᵀJ)⁻¹` at the solution, weighted residuals.
    covariance: Option<DMatrix<f64>>,
}

/// Damped Gauss-Newton (Levenberg-Marquardt) with box constraints enforced by
/// projection.
///
/// `model` returns the (already weighted) residual vector and its Jacobian
/// (one row per residual).
fn least_squares<F>(model: F, start: &[f64], bounds: &[(f64, f64)]) -> Result<Solution>
where
    F: Fn(&[f64]) -> (Vec<f64>, DMatrix<f64>),
{
    let project = |p: &mut [f64]| {
        for (v, &(lo, hi)) in p.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let rss_of = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut params = start.to_vec();
    project(&mut params);
    let (mut res, mut jac) = model(&params);
    let mut rss = rss_of(&res);
    let mut damping = 1e-3;
    let mut last_step = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        if rss == 0.0 {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * DVector::from_column_slice(&res);
        let mut improved = false;
        while damping < 1e16 {
            let mut lhs = jtj.clone();
            for i in 0..params.len() {
                lhs[(i, i)] += damping * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&grad))) else {
                damping *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            project(&mut trial);
            let (tres, tjac) = model(&trial);
            let trss = rss_of(&tres);
            if trss.is_finite() && trss <= rss {
                let num: f64 = trial.iter().zip(&params).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = params.iter().map(|v| v * v).sum::<f64>().sqrt() + STEP_TOL;
                last_step = num / den;
                params = trial;
                res = tres;
                jac = tjac;
                rss = trss;
                damping = (damping / 10.0).max(1e-12);
                improved = true;
                break;
            }
            damping *= 10.0;
        }
        // No descent direction left: we sit at a (constrained) minimum.
        if !improved || last_step < STEP_TOL {
            return Ok(finish(params, rss, &jac));
        }
    }
    if rss == 0.0 {
        return Ok(finish(params, rss, &jac));
    }
    Err(Error::NoConvergence { iterations: MAX_ITERATIONS, last_step, rss })
}

fn finish(params: Vec<f64>, rss: f64, jac: &DMatrix<f64>) -> Solution {
    let covariance = (jac.transpose() * jac).try_inverse();
    Solution { params, rss, covariance }
}

fn weight(p: &TracePoint) -> f64 {
    p.sigma.map_or(1.0, |s| 1.0 / s.max(SIGMA_FLOOR))
}

fn fit_decay(points: &[&TracePoint], scale: f64) -> Result<(f64, f64, f64)> {
    // log-linear start from the clearly positive samples
    let usable: Vec<(f64, f64)> =
        points.iter().filter(|p| p.d > 1e-3).map(|p| ((p.x / scale).powi(2), p.d.ln())).collect();
    let (a0, u0) = if usable.len() >= 2 {
        let n = usable.len() as f64;
        let (sx, sy) = usable.iter().fold((0.0, 0.0), |acc, &(x, y)| (acc.0 + x, acc.1 + y));
        let (mx, my) = (sx / n, sy / n);
        let sxx: f64 = usable.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
        let sxy: f64 = usable.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        ((my - slope * mx).exp(), (-slope).max(0.0))
    } else {
        (points.iter().map(|p| p.d).fold(0.0, f64::max).max(A_MIN), 1.0)
    };
    let model = |p: &[f64]| {
        let (a, u) = (p[0], p[1]);
        let mut r = Vec::with_capacity(points.len());
        let mut j = DMatrix::zeros(points.len(), 2);
        for (i, pt) in points.iter().enumerate() {
            let w = weight(pt);
            let t = (pt.x / scale).powi(2);
            let e = (-u * t).exp();
            r.push(w * (a * e - pt.d));
            j[(i, 0)] = w * e;
            j[(i, 1)] = -w * a * t * e;
        }
        (r, j)
    };
    let sol = least_squares(model, &[a0.clamp(A_MIN, A_MAX), u0], &[(A_MIN, A_MAX), (0.0, f64::INFINITY)])?;
    Ok((sol.params[0], sol.params[1], sol.rss))
}

/// Two-stage fit of a consecutive-schedule curve split at `split` (199 for
/// the standard layout).
///
/// Requires at least four samples on each side of the split. When the first
/// stage finds no decay the result is flagged `degenerate` and carries no `K`.
pub fn fit_consecutive(data: &TraceDistanceTrajectory, split: f64) -> Result<FitResult> {
    if !(split.is_finite() && split > 0.0) {
        return Err(Error::InvalidParameter(format!("split point {split} must be > 0")));
    }
    let (first, second): (Vec<&TracePoint>, Vec<&TracePoint>) = data.points().iter().partition(|p| p.x <= split);
    if first.len() < MIN_POINTS_PER_STAGE || second.len() < MIN_POINTS_PER_STAGE {
        return Err(Error::InsufficientData(format!(
            "{} points at x <= {split} and {} after; need {MIN_POINTS_PER_STAGE} on each side",
            first.len(),
            second.len()
        )));
    }
    let (a, u, rss1) = fit_decay(&first, split)?;
    let b = u / (split * split);
    let n_points = data.len();
    if u <= DEGENERATE_U {
        let rss2: f64 = second.iter().map(|p| (weight(p) * (a - p.d)).powi(2)).sum();
        return Ok(FitResult { a, b, k: None, k_stderr: None, rss: rss1 + rss2, n_points, degenerate: true });
    }

    let model = |p: &[f64]| {
        let c = p[0];
        let mut r = Vec::with_capacity(second.len());
        let mut j = DMatrix::zeros(second.len(), 1);
        for (i, pt) in second.iter().enumerate() {
            let w = weight(pt);
            let xi = (pt.x - split) / split;
            let e = (-u * (1.0 + xi * xi - 2.0 * c * xi)).exp();
            r.push(w * (a * e - pt.d));
            j[(i, 0)] = w * a * e * 2.0 * u * xi;
        }
        (r, j)
    };
    let start = (0..=100)
        .map(|i| i as f64 / 100.0)
        .map(|c| (c, model(&[c]).0.iter().map(|v| v * v).sum::<f64>()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(c, _)| c)
        .expect("non-empty scan");
    let sol = least_squares(model, &[start], &[(0.0, 1.0)])?;
    let dof = second.len().saturating_sub(1).max(1) as f64;
    let k_stderr = sol.covariance.as_ref().map(|cov| (cov[(0, 0)] * sol.rss / dof).sqrt());
    Ok(FitResult {
        a,
        b,
        k: Some(-sol.params[0]),
        k_stderr,
        rss: rss1 + sol.rss,
        n_points,
        degenerate: false,
    })
}

/// Fit of the simultaneous (offset 0) curve `A·exp(−B(1−|K|)x²/2)`.
///
/// Only the product `B(1−|K|)` is identifiable from this curve, so `B` is
/// taken from the consecutive fit and `|K|` follows from the fitted rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TopCurveFit {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub rss: f64,
    /// The curve did not decay: `|K| = 1`, decoherence is halted.
    pub halted: bool,
}

/// Averaged parameters of the family of schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyFit {
    pub bottom: FitResult,
    pub top: TopCurveFit,
    pub a0: f64,
    pub b0: f64,
    pub k0: f64,
    /// Residual sum of squares of the averaged model against each optional
    /// intermediate curve, keyed by offset.
    pub intermediate_rss: Vec<(f64, f64)>,
}

impl FamilyFit {
    /// `A0·exp(−B0(x1² + x2² − 2|K0|x1x2))` along `sched`.
    pub fn predict(&self, sched: &PlateSchedule, x: f64) -> Result<f64> {
        let (x1, x2) = sched.times_at(x)?;
        Ok(self.a0 * (-self.b0 * (x1 * x1 + x2 * x2 - 2.0 * self.k0.abs() * x1 * x2)).exp())
    }
}

fn fit_top(data: &TraceDistanceTrajectory, b: f64) -> Result<TopCurveFit> {
    let points: Vec<&TracePoint> = data.points().iter().collect();
    if points.len() < MIN_POINTS_PER_STAGE {
        return Err(Error::InsufficientData(format!(
            "top curve has {} points, need {MIN_POINTS_PER_STAGE}",
            points.len()
        )));
    }
    // G(x) = A·exp(-w·(x/199)²) with w = B(1-|K|)·199²/2
    let (a, w, rss) = fit_decay(&points, ARM_MAX)?;
    let u = b * ARM_MAX * ARM_MAX;
    let c = (1.0 - 2.0 * w / u).clamp(0.0, 1.0);
    Ok(TopCurveFit { a, b, k: -c, rss, halted: w <= DEGENERATE_U })
}

/// Fits the consecutive (offset 199) and simultaneous (offset 0) curves and
/// averages their parameters.
pub fn fit_family(bottom: &TraceDistanceTrajectory, top: &TraceDistanceTrajectory) -> Result<FamilyFit> {
    fit_family_with_intermediates(bottom, top, &[])
}

/// As [`fit_family`], also scoring the averaged model on further offsets.
pub fn fit_family_with_intermediates(
    bottom: &TraceDistanceTrajectory,
    top: &TraceDistanceTrajectory,
    intermediates: &[(f64, &TraceDistanceTrajectory)],
) -> Result<FamilyFit> {
    let bottom_fit = fit_consecutive(bottom, ARM_MAX)?;
    let k1 = bottom_fit.k()?;
    let top_fit = fit_top(top, bottom_fit.b)?;
    let mut fam = FamilyFit {
        a0: 0.5 * (bottom_fit.a + top_fit.a),
        b0: 0.5 * (bottom_fit.b + top_fit.b),
        k0: 0.5 * (k1 + top_fit.k),
        bottom: bottom_fit,
        top: top_fit,
        intermediate_rss: Vec::new(),
    };
    for &(offset, curve) in intermediates {
        let sched = PlateSchedule::new(offset)?;
        let mut rss = 0.0;
        for p in curve.points() {
            rss += (weight(p) * (fam.predict(&sched, p.x)? - p.d)).powi(2);
        }
        fam.intermediate_rss.push((offset, rss));
    }
    Ok(fam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{sample_points, TOTAL_MAX};

    fn model_curve(a: f64, u: f64, k: f64, offset: f64, xs: &[f64]) -> TraceDistanceTrajectory {
        let b = u / (ARM_MAX * ARM_MAX);
        let sched = PlateSchedule::new(offset).unwrap();
        let pts = xs
            .iter()
            .map(|&x| {
                let (x1, x2) = sched.times_at(x).unwrap();
                TracePoint { x, d: a * (-b * (x1 * x1 + x2 * x2 - 2.0 * k.abs() * x1 * x2)).exp(), sigma: None }
            })
            .collect();
        TraceDistanceTrajectory::new(pts).unwrap()
    }

    #[test]
    fn noiseless_round_trip() {
        let xs = sample_points(5.0).unwrap();
        for (a, u, k) in [(1.0, 4.33, -0.92), (0.93, 2.1, -0.55), (0.98, 3.0, -0.17)] {
            let fit = fit_consecutive(&model_curve(a, u, k, ARM_MAX, &xs), ARM_MAX).unwrap();
            assert!((fit.a - a).abs() < 1e-6);
            assert!((fit.b - u / (ARM_MAX * ARM_MAX)).abs() < 1e-6 / (ARM_MAX * ARM_MAX));
            assert!((fit.k().unwrap() - k).abs() < 1e-6);
            assert!(!fit.degenerate);
            assert!(fit.k_stderr.unwrap() < 1e-4);
        }
    }

    #[test]
    fn constant_data_is_degenerate() {
        let xs = sample_points(10.0).unwrap();
        let pts = xs.iter().map(|&x| TracePoint { x, d: 1.0, sigma: None }).collect();
        let fit = fit_consecutive(&TraceDistanceTrajectory::new(pts).unwrap(), ARM_MAX).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.b, 0.0);
        assert!(matches!(fit.k(), Err(Error::DegenerateFit)));
        let json = serde_json::to_value(fit.to_json()).unwrap();
        assert_eq!(json["k"], serde_json::Value::Null);
        assert_eq!(json["degenerate_flag"], true);
    }

    #[test]
    fn too_few_points() {
        let xs = [0.0, 50.0, 100.0, 150.0, 199.0, 250.0, 300.0];
        let err = fit_consecutive(&model_curve(1.0, 3.0, -0.5, ARM_MAX, &xs), ARM_MAX).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn json_field_names() {
        let xs = sample_points(10.0).unwrap();
        let fit = fit_consecutive(&model_curve(1.0, 4.33, -0.92, ARM_MAX, &xs), ARM_MAX).unwrap();
        let json = serde_json::to_value(fit.to_json()).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["a", "b_per_lambda0_sq", "degenerate_flag", "k", "n_points", "rss"]);
    }

    #[test]
    fn family_self_consistency() {
        let xs = sample_points(4.0).unwrap();
        let (a, u, k) = (0.97, 4.33, -0.92);
        let fam = fit_family(&model_curve(a, u, k, ARM_MAX, &xs), &model_curve(a, u, k, 0.0, &xs)).unwrap();
        assert!((fam.k0 - k).abs() < 1e-6);
        assert!((fam.a0 - a).abs() < 1e-6);
        assert!((fam.b0 * ARM_MAX * ARM_MAX - u).abs() < 1e-6);
        assert!(!fam.top.halted);
    }

    #[test]
    fn family_predictions_are_nested() {
        let xs = sample_points(4.0).unwrap();
        let fam = fit_family(&model_curve(1.0, 4.33, -0.92, ARM_MAX, &xs), &model_curve(1.0, 4.33, -0.92, 0.0, &xs))
            .unwrap();
        let top = PlateSchedule::simultaneous();
        let bottom = PlateSchedule::consecutive();
        for o in [75.0, 100.0, 150.0] {
            let mid = PlateSchedule::new(o).unwrap();
            for x in (1..398).map(f64::from) {
                let (t, m, b) = (fam.predict(&top, x).unwrap(), fam.predict(&mid, x).unwrap(), fam.predict(&bottom, x).unwrap());
                assert!(b <= m + 1e-12 && m <= t + 1e-12, "o={o} x={x}: {b} {m} {t}");
            }
        }
        assert!((fam.predict(&top, TOTAL_MAX).unwrap() - fam.predict(&bottom, TOTAL_MAX).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn halted_top_curve() {
        let xs = sample_points(4.0).unwrap();
        let fam = fit_family(&model_curve(1.0, 4.33, -1.0, ARM_MAX, &xs), &model_curve(1.0, 4.33, -1.0, 0.0, &xs))
            .unwrap();
        assert!(fam.top.halted);
        assert_eq!(fam.top.k, -1.0);
        assert!((fam.k0 + 1.0).abs() < 1e-6);
    }

    #[test]
    fn intermediate_curves_are_scored() {
        let xs = sample_points(4.0).unwrap();
        let mid = model_curve(1.0, 4.33, -0.92, 100.0, &xs);
        let fam = fit_family_with_intermediates(
            &model_curve(1.0, 4.33, -0.92, ARM_MAX, &xs),
            &model_curve(1.0, 4.33, -0.92, 0.0, &xs),
            &[(100.0, &mid)],
        )
        .unwrap();
        assert_eq!(fam.intermediate_rss.len(), 1);
        assert!(fam.intermediate_rss[0].1 < 1e-10);
    }

    #[test]
    fn weighted_fit_tolerates_zero_error_bars() {
        let xs = sample_points(10.0).unwrap();
        let clean = model_curve(1.0, 4.33, -0.66, ARM_MAX, &xs);
        let pts = clean
            .points()
            .iter()
            .map(|p| TracePoint { sigma: Some(((1.0 - p.d * p.d).max(0.0) / 18000.0).sqrt()), ..*p })
            .collect();
        let fit = fit_consecutive(&TraceDistanceTrajectory::new(pts).unwrap(), ARM_MAX).unwrap();
        assert!((fit.k().unwrap() + 0.66).abs() < 1e-6);
    }
}
