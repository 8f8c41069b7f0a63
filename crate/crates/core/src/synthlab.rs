//! Synthetic coincidence-counting experiments.
//!
//! Each outcome pair of a product measurement basis is counted as an
//! independent Poisson variable. For the evolved `ψ⁺` state only the
//! `|HH⟩⟨VV|` coherence survives, and its real part equals the `σx⊗σx`
//! correlation, so a single diagonal-basis setting estimates the trace
//! distance of the Bell pair (assuming zero mean detuning, i.e. real `κ12`).

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::analysis::{TraceDistanceTrajectory, TracePoint};
use crate::channel::{apply_dephasing, DensityMatrix4, PureTwoQubitState};
use crate::error::{Error, Result};
use crate::schedule::{PlateSchedule, TOTAL_MAX};
use crate::spectra::{decoherence_set, Characteristic};

/// Product measurement bases. Outcomes are ordered `00, 01, 10, 11` where
/// `0` is the first state of the single-photon basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementBasis {
    /// `H, V`.
    Rectilinear,
    /// `+45°, −45°`.
    Diagonal,
    /// `R, L` with `R = (H − iV)/√2`.
    Circular,
}

impl MeasurementBasis {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Rectilinear => "HV",
            Self::Diagonal => "DD",
            Self::Circular => "RL",
        }
    }

    fn states(&self) -> [Vector2<Complex64>; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = |re: f64, im: f64| Complex64::new(re, im);
        match self {
            Self::Rectilinear => [Vector2::new(c(1.0, 0.0), c(0.0, 0.0)), Vector2::new(c(0.0, 0.0), c(1.0, 0.0))],
            Self::Diagonal => [Vector2::new(c(s, 0.0), c(s, 0.0)), Vector2::new(c(s, 0.0), c(-s, 0.0))],
            Self::Circular => [Vector2::new(c(s, 0.0), c(0.0, -s)), Vector2::new(c(s, 0.0), c(0.0, s))],
        }
    }

    /// Probabilities of the four outcome pairs.
    pub fn probabilities(&self, rho: &DensityMatrix4) -> [f64; 4] {
        let st = self.states();
        std::array::from_fn(|k| {
            let (i, j) = (k / 2, k % 2);
            let v = nalgebra::Vector4::new(
                st[i][0] * st[j][0],
                st[i][0] * st[j][1],
                st[i][1] * st[j][0],
                st[i][1] * st[j][1],
            );
            (v.adjoint() * rho.matrix() * v)[(0, 0)].re.max(0.0)
        })
    }
}

impl fmt::Display for MeasurementBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MeasurementBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HV" => Ok(Self::Rectilinear),
            "DD" => Ok(Self::Diagonal),
            "RL" => Ok(Self::Circular),
            other => Err(Error::UnknownBasis(other.to_string())),
        }
    }
}

/// Expected coincidences per point and the integration time they took.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingPlan {
    pub total_expected: f64,
    pub duration_s: f64,
}

impl CountingPlan {
    /// Narrow pump and the plate-configuration series.
    pub const NARROW_PUMP: Self = Self { total_expected: 18_000.0, duration_s: 10.0 };
    pub const PANEL_B: Self = Self { total_expected: 35_000.0, duration_s: 4.0 };
    /// Also used for the pump-dispersion series.
    pub const PANEL_C: Self = Self { total_expected: 35_000.0, duration_s: 2.0 };
    pub const PANEL_D: Self = Self { total_expected: 36_000.0, duration_s: 4.0 };

    pub fn new(total_expected: f64, duration_s: f64) -> Result<Self> {
        if !(total_expected.is_finite() && total_expected > 0.0) {
            return Err(Error::InvalidParameter(format!("expected counts {total_expected} must be > 0")));
        }
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::InvalidParameter(format!("duration {duration_s} s must be > 0")));
        }
        Ok(Self { total_expected, duration_s })
    }
}

/// Coincidence counts of one measurement setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub basis: MeasurementBasis,
    /// Outcomes `00, 01, 10, 11` of the basis.
    pub counts: [u64; 4],
    pub duration: f64,
    /// Expected total counts per `duration`.
    pub rate: f64,
}

impl CountRecord {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Draws Poisson counts for each outcome pair.
pub fn sample_counts<R: Rng + ?Sized>(
    rho: &DensityMatrix4,
    basis: MeasurementBasis,
    plan: CountingPlan,
    rng: &mut R,
) -> CountRecord {
    let probs = basis.probabilities(rho);
    let counts = probs.map(|p| {
        let mean = plan.total_expected * p;
        if mean > 0.0 {
            Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
        } else {
            0
        }
    });
    CountRecord { basis, counts, duration: plan.duration_s, rate: plan.total_expected }
}

/// [`sample_counts`] with a fresh generator seeded by `seed`.
pub fn sample_counts_seeded(
    rho: &DensityMatrix4,
    basis: MeasurementBasis,
    plan: CountingPlan,
    seed: u64,
) -> CountRecord {
    sample_counts(rho, basis, plan, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Estimates the Bell-pair trace distance from diagonal-basis counts:
/// `D = (n₊₊ + n₋₋ − n₊₋ − n₋₊)/n`, clamped to `[0, 1]`, with standard error
/// `√((1 − D²)/n)`.
pub fn estimate_distance(rec: &CountRecord) -> Result<(f64, f64)> {
    if rec.basis != MeasurementBasis::Diagonal {
        return Err(Error::InvalidParameter(format!(
            "distance estimator needs diagonal-basis counts, got {}",
            rec.basis
        )));
    }
    let n = rec.total();
    if n == 0 {
        return Err(Error::ZeroCounts);
    }
    let [pp, pm, mp, mm] = rec.counts.map(|c| c as f64);
    let n = n as f64;
    let d = ((pp + mm - pm - mp) / n).clamp(0.0, 1.0);
    Ok((d, ((1.0 - d * d) / n).sqrt()))
}

/// Noisy replica of a trace-distance measurement along a schedule, using the
/// evolved `ψ⁺` and one diagonal-basis setting per point.
pub fn synth_experiment<P: Characteristic + ?Sized>(
    env: &P,
    sched: &PlateSchedule,
    points: &[f64],
    plan: CountingPlan,
    seed: u64,
) -> Result<TraceDistanceTrajectory> {
    if points.is_empty() {
        return Err(Error::InsufficientData("no sample points".into()));
    }
    if let Some(&x) = points.iter().find(|x| !(0.0..=TOTAL_MAX).contains(*x)) {
        return Err(Error::OutOfSchedule { x, max: TOTAL_MAX });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psi = PureTwoQubitState::bell_plus();
    let samples = points
        .iter()
        .map(|&x| {
            let (x1, x2) = sched.times_at(x)?;
            let rho = apply_dephasing(&psi, &decoherence_set(env, x1, x2)?)?;
            let rec = sample_counts(&rho, MeasurementBasis::Diagonal, plan, &mut rng);
            let (d, sigma) = estimate_distance(&rec)?;
            Ok(TracePoint { x, d, sigma: Some(sigma) })
        })
        .collect::<Result<Vec<_>>>()?;
    TraceDistanceTrajectory::new(samples)
}

/// Multiples of 10 λ₀ together with both schedule corners 199 and 398.
pub fn default_synth_points() -> Vec<f64> {
    let mut xs: Vec<f64> = (0..=39).map(|i| 10.0 * i as f64).collect();
    xs.push(199.0);
    xs.push(TOTAL_MAX);
    xs.sort_by(f64::total_cmp);
    xs
}
