//! Observables along trajectories and parameter estimation.

mod fit;

use std::io::{Read, Write};

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{DensityMatrix2, DensityMatrix4, PureTwoQubitState};
use crate::error::{Error, Result};
use crate::schedule::{trajectory, PlateSchedule, ARM_MAX};
use crate::spectra::{Characteristic, GaussianJointSpectrum};

pub use fit::{
    fit_consecutive, fit_family, fit_family_with_intermediates, FamilyFit, FitResult, FitResultJson, TopCurveFit,
    DEGENERATE_U, SIGMA_FLOOR,
};

/// One sample of a trace-distance curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    /// Total effective path difference, λ₀ units.
    pub x: f64,
    pub d: f64,
    /// Standard error of `d`, when measured.
    pub sigma: Option<f64>,
}

/// Trace distance sampled at strictly increasing path differences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceDistanceTrajectory {
    points: Vec<TracePoint>,
}

impl TraceDistanceTrajectory {
    pub fn new(points: Vec<TracePoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.d.is_finite()) {
                return Err(Error::InvalidTrajectory(format!("point {i} is not finite")));
            }
            let sigma = p.sigma.unwrap_or(0.0);
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::InvalidTrajectory(format!("point {i} has invalid error bar {sigma}")));
            }
            if p.d < -3.0 * sigma - 1e-12 || p.d > 1.0 + 3.0 * sigma + 1e-9 {
                return Err(Error::InvalidTrajectory(format!("point {i}: D = {} outside [0, 1]", p.d)));
            }
        }
        if let Some(i) = points.windows(2).position(|w| !(w[1].x > w[0].x)) {
            return Err(Error::InvalidTrajectory(format!(
                "x not strictly increasing at point {} ({} after {})",
                i + 1,
                points[i + 1].x,
                points[i].x
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.d).collect()
    }

    /// Multiplies every distance (and error bar) by a visibility factor.
    pub fn scaled(&self, factor: f64) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| TracePoint { x: p.x, d: p.d * factor, sigma: p.sigma.map(|s| s * factor) })
            .collect();
        Self { points }
    }

    pub fn has_error_bars(&self) -> bool {
        !self.points.is_empty() && self.points.iter().all(|p| p.sigma.is_some())
    }

    /// CSV with header `x_lambda0,D` or `x_lambda0,D,d_err` when every point
    /// carries an error bar.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let with_err = self.has_error_bars();
        if with_err {
            w.write_record(["x_lambda0", "D", "d_err"])?;
        } else {
            w.write_record(["x_lambda0", "D"])?;
        }
        for p in &self.points {
            match (with_err, p.sigma) {
                (true, Some(s)) => w.serialize((p.x, p.d, s))?,
                _ => w.serialize((p.x, p.d))?,
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV produced by [`write_csv`](Self::write_csv). Errors name
    /// the offending data row (1-based, header excluded).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let with_err = match names.as_slice() {
            ["x_lambda0", "D"] => false,
            ["x_lambda0", "D", "d_err"] => true,
            _ => return Err(Error::InvalidTrajectory(format!("unexpected header {names:?}"))),
        };
        let mut points = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let row = row + 1;
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::InvalidTrajectory(format!(
                    "row {row}: expected {} fields, found {}",
                    names.len(),
                    rec.len()
                )));
            }
            let cell = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| {
                    Error::InvalidTrajectory(format!("row {row}: cannot parse {:?} in column {}", &rec[i], names[i]))
                })
            };
            points.push(TracePoint { x: cell(0)?, d: cell(1)?, sigma: if with_err { Some(cell(2)?) } else { None } });
        }
        Self::new(points)
    }
}

/// Observables shared by the one- and two-photon density matrices.
pub trait DensityOperator {
    fn to_dmatrix(&self) -> DMatrix<Complex64>;

    /// `½·tr|self − other|`.
    fn trace_distance_to(&self, other: &Self) -> f64;
}

fn half_abs_eigensum(eigs: impl IntoIterator<Item = f64>) -> f64 {
    0.5 * eigs.into_iter().map(f64::abs).sum::<f64>()
}

impl DensityOperator for DensityMatrix4 {
    fn to_dmatrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_column_slice(4, 4, self.matrix().as_slice())
    }

    fn trace_distance_to(&self, other: &Self) -> f64 {
        let diff = self.matrix() - other.matrix();
        half_abs_eigensum(hermitian_part(&diff).symmetric_eigenvalues().iter().copied())
    }
}

impl DensityOperator for DensityMatrix2 {
    fn to_dmatrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_column_slice(2, 2, self.matrix().as_slice())
    }

    fn trace_distance_to(&self, other: &Self) -> f64 {
        let diff = self.matrix() - other.matrix();
        half_abs_eigensum(hermitian_part(&diff).symmetric_eigenvalues().iter().copied())
    }
}

fn hermitian_part<const N: usize>(m: &nalgebra::SMatrix<Complex64, N, N>) -> nalgebra::SMatrix<Complex64, N, N> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Trace distance between two states of the same shape.
pub fn trace_distance<S: DensityOperator>(a: &S, b: &S) -> f64 {
    a.trace_distance_to(b)
}

/// Trace distance of two dynamically sized matrices.
pub fn trace_distance_matrices(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Result<f64> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(a.nrows(), b.nrows()));
    }
    let diff = a - b;
    let herm = (&diff + diff.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(half_abs_eigensum(herm.symmetric_eigenvalues().iter().copied()))
}

/// Closed-form trace distance of the evolved Bell pair `ψ±`:
/// `exp(−B(x1² + x2² − 2|K|x1x2))` at the arm arguments of `x`.
pub fn bell_pair_distance(spec: &GaussianJointSpectrum, sched: &PlateSchedule, x: f64) -> Result<f64> {
    let (x1, x2) = sched.times_at(x)?;
    Ok((-spec.b * (x1 * x1 + x2 * x2 - 2.0 * spec.k.abs() * x1 * x2)).exp())
}

/// Total increase of the trace distance: the sum of positive increments
/// between consecutive samples.
pub fn blp_measure(traj: &TraceDistanceTrajectory) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::InsufficientData(format!("{} points, need at least 2", traj.len())));
    }
    Ok(positive_increments(&traj.distances()))
}

/// As [`blp_measure`] on raw `(x, D)` samples, which must be sorted in `x`.
pub fn blp_from_samples(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("{} points, need at least 2", samples.len())));
    }
    if let Some(i) = samples.windows(2).position(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidTrajectory(format!("samples unsorted at index {}", i + 1)));
    }
    Ok(positive_increments(&samples.iter().map(|s| s.1).collect::<Vec<_>>()))
}

fn positive_increments(d: &[f64]) -> f64 {
    d.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum()
}

/// Non-Markovianity of the Bell pair on the consecutive schedule, from the
/// closed form: the revival from `exp(−u)` at `x = 199` up to the maximum
/// `exp(−u(1−K²))` reached at `x2 = |K|·199`. Positive `K` yields no revival.
pub fn predict_n_consecutive(u: f64, k: f64) -> f64 {
    let k = k.min(0.0);
    (-u * (1.0 - k * k)).exp() - (-u).exp()
}

/// Decay `u` maximizing [`predict_n_consecutive`] at fixed `K`, with the
/// maximal value.
pub fn max_n_consecutive(k: f64) -> (f64, f64) {
    let k2 = k.min(0.0).powi(2);
    if k2 == 0.0 {
        return (0.0, 0.0);
    }
    if k2 >= 1.0 {
        return (f64::INFINITY, 1.0);
    }
    let u = -(1.0 - k2).ln() / k2;
    (u, predict_n_consecutive(u, k))
}

/// Large-`u` solution of `predict_n_consecutive(u, K) = target`.
pub fn calibrate_u(target: f64, k: f64) -> Result<f64> {
    let (u_star, n_max) = max_n_consecutive(k);
    if !(target > 0.0 && target <= n_max) || !u_star.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-Markovianity {target} unreachable at K = {k} (max {n_max})"
        )));
    }
    let (mut lo, mut hi) = (u_star, u_star.max(1.0));
    while predict_n_consecutive(hi, k) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if predict_n_consecutive(mid, k) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of [`blp_optimize`].
#[derive(Debug, Clone)]
pub struct BlpOptimum {
    pub n: f64,
    pub pair: (PureTwoQubitState, PureTwoQubitState),
    /// Value of the Bell pair `ψ±`.
    pub bell_n: f64,
    /// Best value among the random pairs alone.
    pub best_random_n: f64,
}

/// Random search for the initial pair with the largest information backflow.
///
/// `n_pairs` Haar-random pure pairs are drawn from a ChaCha8 stream seeded
/// with `seed`; the Bell pair `ψ±` is always evaluated too.
pub fn blp_optimize<P: Characteristic + ?Sized>(
    env: &P,
    sched: &PlateSchedule,
    step: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<BlpOptimum> {
    if n_pairs == 0 {
        return Err(Error::InvalidParameter("need at least one random pair".into()));
    }
    let bell = (PureTwoQubitState::bell_plus(), PureTwoQubitState::bell_minus());
    let value = |pair: &(PureTwoQubitState, PureTwoQubitState)| -> Result<f64> {
        blp_measure(&trajectory(env, sched, step, (&pair.0, &pair.1))?)
    };
    let bell_n = value(&bell)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, (PureTwoQubitState, PureTwoQubitState))> = None;
    for _ in 0..n_pairs {
        let pair = (PureTwoQubitState::random_haar(&mut rng), PureTwoQubitState::random_haar(&mut rng));
        let n = value(&pair)?;
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, pair));
        }
    }
    let (best_random_n, random_pair) = best.expect("n_pairs >= 1");
    let (n, pair) = if bell_n >= best_random_n { (bell_n, bell) } else { (best_random_n, random_pair) };
    Ok(BlpOptimum { n, pair, bell_n, best_random_n })
}

/// Eigenvalues of a density matrix below this are indistinguishable from
/// round-off and treated as zero.
const RANK_FLOOR: f64 = 1e-14;

/// Wootters concurrence.
///
/// With `ρ = Σ p_i |v_i⟩⟨v_i|` and `w_i = √p_i·v_i`, the `λ_i` are the singular
/// values of `τ = Wᵀ(σ_y⊗σ_y)W`, equal to the square roots of the eigenvalues
/// of `ρ(σ_y⊗σ_y)ρ*(σ_y⊗σ_y)`; the concurrence is `max(0, λ1 − λ2 − λ3 − λ4)`.
pub fn concurrence(rho: &DensityMatrix4) -> Result<f64> {
    rho.validate()?;
    let m = hermitian_part(rho.matrix());
    let eig = m.symmetric_eigen();
    let mut w = eig.eigenvectors;
    for (i, &p) in eig.eigenvalues.iter().enumerate() {
        let s = if p > RANK_FLOOR { p.sqrt() } else { 0.0 };
        w.column_mut(i).scale_mut(s);
    }
    let tau = w.transpose() * spin_flip() * w;
    let mut lambdas: Vec<f64> = tau.singular_values().iter().copied().collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).clamp(0.0, 1.0))
}

/// `σ_y ⊗ σ_y` in the `HH, HV, VH, VV` basis.
fn spin_flip() -> Matrix4<Complex64> {
    let o = Complex64::new(1.0, 0.0);
    let z = Complex64::new(0.0, 0.0);
    Matrix4::new(z, z, z, -o, z, z, o, z, z, o, z, z, -o, z, z, z)
}

/// `u = B·199²` for a decay coefficient `B`.
pub fn u_from_b(b: f64) -> f64 {
    b * ARM_MAX * ARM_MAX
}
