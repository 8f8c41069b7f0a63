//! Frequency environments of the photon pair.
//!
//! Everything here works in lab units: path differences `x` are measured in
//! multiples of the reference wavelength λ₀, and frequencies are scaled so
//! that the accumulated relative phase of a photon is simply `ω·x`. In these
//! units a Gaussian joint distribution is described by a single decay
//! coefficient `B` (per λ₀²) and the correlation coefficient `K`.

use std::f64::consts::{LN_2, PI};
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::ARM_MAX;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Reference wavelength of the down-converted photons, in metres.
pub const LAMBDA0_M: f64 = 780e-9;

/// Anything that can evaluate the characteristic function
/// `G(x1, x2) = ∫ P(ω1, ω2) exp(-i(ω1 x1 + ω2 x2))` of a joint distribution.
pub trait Characteristic {
    fn characteristic(&self, x1: f64, x2: f64) -> Result<Complex64>;
}

impl<T: Characteristic + ?Sized> Characteristic for &T {
    fn characteristic(&self, x1: f64, x2: f64) -> Result<Complex64> {
        (**self).characteristic(x1, x2)
    }
}

/// Bivariate Gaussian joint frequency distribution with identical marginal
/// variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianJointSpectrum {
    /// Mean phase rate of photon 1 (rad per λ₀ of path difference).
    pub m1: f64,
    /// Mean phase rate of photon 2.
    pub m2: f64,
    /// Decay coefficient per λ₀².
    pub b: f64,
    /// Frequency correlation coefficient.
    pub k: f64,
}

impl GaussianJointSpectrum {
    /// Zero-mean spectrum.
    pub fn new(b: f64, k: f64) -> Result<Self> {
        Self::with_means(b, k, 0.0, 0.0)
    }

    pub fn with_means(b: f64, k: f64, m1: f64, m2: f64) -> Result<Self> {
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::InvalidParameter(format!("decay coefficient B = {b} must be >= 0")));
        }
        if !(k.is_finite() && (-1.0..=1.0).contains(&k)) {
            return Err(Error::InvalidParameter(format!("correlation K = {k} outside [-1, 1]")));
        }
        if !(m1.is_finite() && m2.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mean".into()));
        }
        Ok(Self { m1, m2, b, k })
    }

    /// Builds the spectrum from the dimensionless decay `u = B·199²`.
    pub fn from_u(u: f64, k: f64) -> Result<Self> {
        Self::new(u / (ARM_MAX * ARM_MAX), k)
    }

    /// `u = B·199²`, the exponent reached after one full arm.
    pub fn u(&self) -> f64 {
        self.b * ARM_MAX * ARM_MAX
    }

    /// Standard deviation of each scaled frequency marginal.
    pub fn sigma(&self) -> f64 {
        (2.0 * self.b).sqrt()
    }

    /// Closed-form characteristic function.
    pub fn gaussian_characteristic(&self, x1: f64, x2: f64) -> Complex64 {
        let phase = -(self.m1 * x1 + self.m2 * x2);
        let decay = -self.b * (x1 * x1 + x2 * x2 + 2.0 * self.k * x1 * x2);
        Complex64::from_polar(decay.exp(), phase)
    }
}

impl Characteristic for GaussianJointSpectrum {
    fn characteristic(&self, x1: f64, x2: f64) -> Result<Complex64> {
        Ok(self.gaussian_characteristic(x1, x2))
    }
}

/// The four decoherence functions at one pair of interaction arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherenceSet {
    pub k1: Complex64,
    pub k2: Complex64,
    pub k12: Complex64,
    pub l12: Complex64,
}

impl DecoherenceSet {
    /// The identity map.
    pub const ONES: Self = Self {
        k1: Complex64::new(1.0, 0.0),
        k2: Complex64::new(1.0, 0.0),
        k12: Complex64::new(1.0, 0.0),
        l12: Complex64::new(1.0, 0.0),
    };

    pub fn entries(&self) -> [(&'static str, Complex64); 4] {
        [("k1", self.k1), ("k2", self.k2), ("k12", self.k12), ("L12", self.l12)]
    }

    /// Largest modulus among the four functions.
    pub fn max_modulus(&self) -> f64 {
        self.entries().iter().map(|(_, z)| z.norm()).fold(0.0, f64::max)
    }
}

/// `κ1 = G(x1,0)`, `κ2 = G(0,x2)`, `κ12 = G(x1,x2)`, `Λ12 = G(x1,-x2)`.
pub fn decoherence_set<P: Characteristic + ?Sized>(
    provider: &P,
    x1: f64,
    x2: f64,
) -> Result<DecoherenceSet> {
    Ok(DecoherenceSet {
        k1: provider.characteristic(x1, 0.0)?,
        k2: provider.characteristic(0.0, x2)?,
        k12: provider.characteristic(x1, x2)?,
        l12: provider.characteristic(x1, -x2)?,
    })
}

/// Sampling options for [`AmplitudeGrid::gaussian`].
#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    /// Half-width of each axis in marginal standard deviations.
    pub span_sigmas: f64,
    pub points: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { span_sigmas: 6.0, points: 512 }
    }
}

const MIN_GRID_POINTS: usize = 16;

/// Discretized two-photon amplitude `g(ω1, ω2)` on a uniform grid.
///
/// Values are stored row-major with `ω1` as the slow index. The grid is
/// normalized on construction so that the midpoint-rule sum of `|g|²·dω1·dω2`
/// equals one.
#[derive(Debug, Clone)]
pub struct AmplitudeGrid {
    axis1: Vec<f64>,
    axis2: Vec<f64>,
    g: Vec<Complex64>,
    p: Vec<f64>,
    d1: f64,
    d2: f64,
}

fn uniform_step(axis: &[f64], which: usize) -> Result<f64> {
    if axis.len() < MIN_GRID_POINTS {
        return Err(Error::InvalidGrid(format!(
            "axis {which} has {} points, need at least {MIN_GRID_POINTS}",
            axis.len()
        )));
    }
    if axis.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidGrid(format!("axis {which} has non-finite samples")));
    }
    let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if step <= 0.0 {
        return Err(Error::InvalidGrid(format!("axis {which} is not strictly increasing")));
    }
    for (i, w) in axis.windows(2).enumerate() {
        let d = w[1] - w[0];
        if d <= 0.0 {
            return Err(Error::InvalidGrid(format!("axis {which} is not strictly increasing at index {i}")));
        }
        if (d - step).abs() > 1e-6 * step {
            return Err(Error::InvalidGrid(format!("axis {which} is not uniformly spaced at index {i}")));
        }
    }
    Ok(step)
}

impl AmplitudeGrid {
    /// Builds and normalizes a grid from raw amplitudes.
    pub fn from_amplitudes(axis1: Vec<f64>, axis2: Vec<f64>, mut g: Vec<Complex64>) -> Result<Self> {
        let d1 = uniform_step(&axis1, 1)?;
        let d2 = uniform_step(&axis2, 2)?;
        if g.len() != axis1.len() * axis2.len() {
            return Err(Error::InvalidGrid(format!(
                "{} amplitudes for a {}x{} grid",
                g.len(),
                axis1.len(),
                axis2.len()
            )));
        }
        let mass: f64 = g.iter().map(|z| z.norm_sqr()).sum::<f64>() * d1 * d2;
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidGrid(format!("total probability {mass} cannot be normalized")));
        }
        let scale = mass.sqrt().recip();
        g.iter_mut().for_each(|z| *z *= scale);
        let p = g.iter().map(|z| z.norm_sqr()).collect();
        Ok(Self { axis1, axis2, g, p, d1, d2 })
    }

    /// Samples `sqrt(P)` of a Gaussian spectrum at cell midpoints spanning
    /// `±span_sigmas` standard deviations around the means.
    pub fn gaussian(spec: &GaussianJointSpectrum, opts: GridOptions) -> Result<Self> {
        if spec.b <= 0.0 {
            return Err(Error::InvalidParameter("grid sampling needs B > 0".into()));
        }
        if spec.k.abs() >= 1.0 {
            return Err(Error::InvalidParameter("grid sampling needs |K| < 1".into()));
        }
        if opts.points < MIN_GRID_POINTS || !(opts.span_sigmas > 0.0) {
            return Err(Error::InvalidParameter(format!("bad grid options {opts:?}")));
        }
        let sigma = spec.sigma();
        let n = opts.points;
        let h = 2.0 * opts.span_sigmas * sigma / n as f64;
        let axis = |mean: f64| -> Vec<f64> {
            (0..n).map(|i| mean - opts.span_sigmas * sigma + (i as f64 + 0.5) * h).collect()
        };
        let axis1 = axis(spec.m1);
        let axis2 = axis(spec.m2);
        let var = sigma * sigma;
        let one_minus_k2 = 1.0 - spec.k * spec.k;
        let mut g = Vec::with_capacity(n * n);
        for &w1 in &axis1 {
            let u = (w1 - spec.m1) / sigma;
            for &w2 in &axis2 {
                let v = (w2 - spec.m2) / sigma;
                let q = (u * u + v * v - 2.0 * spec.k * u * v) / one_minus_k2;
                let density = (-0.5 * q).exp() / (2.0 * PI * var * one_minus_k2.sqrt());
                g.push(Complex64::new(density.sqrt(), 0.0));
            }
        }
        Self::from_amplitudes(axis1, axis2, g)
    }

    pub fn axis1(&self) -> &[f64] {
        &self.axis1
    }

    pub fn axis2(&self) -> &[f64] {
        &self.axis2
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.g
    }

    /// Cached `|g|²` values, same layout as [`amplitudes`](Self::amplitudes).
    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn steps(&self) -> (f64, f64) {
        (self.d1, self.d2)
    }

    pub fn cell_area(&self) -> f64 {
        self.d1 * self.d2
    }

    /// Midpoint-rule total probability.
    pub fn total_probability(&self) -> f64 {
        self.p.iter().sum::<f64>() * self.cell_area()
    }

    /// Fails when `|dω·x|` exceeds π on either axis.
    pub fn check_aliasing(&self, x1: f64, x2: f64) -> Result<()> {
        for (axis, (d, x)) in [(self.d1, x1), (self.d2, x2)].into_iter().enumerate() {
            let phase_per_step = (d * x).abs();
            if phase_per_step > PI {
                return Err(Error::Aliasing { axis: axis + 1, phase_per_step });
            }
        }
        Ok(())
    }

    /// Per-axis phasors `exp(-i ω x)`.
    pub(crate) fn axis_phasors(axis: &[f64], x: f64) -> Vec<Complex64> {
        axis.iter().map(|w| Complex64::from_polar(1.0, -w * x)).collect()
    }

    /// Direct 2D quadrature of the characteristic function.
    pub fn numeric_characteristic(&self, x1: f64, x2: f64) -> Result<Complex64> {
        self.check_aliasing(x1, x2)?;
        let e1 = Self::axis_phasors(&self.axis1, x1);
        let e2 = Self::axis_phasors(&self.axis2, x2);
        let n2 = self.axis2.len();
        let sum: Complex64 = self
            .p
            .chunks_exact(n2)
            .zip(&e1)
            .map(|(row, &a)| {
                let inner: Complex64 = row.iter().zip(&e2).map(|(&p, &b)| b * p).sum();
                a * inner
            })
            .sum();
        Ok(sum * self.cell_area())
    }

    /// Multiplies every amplitude by `exp(iβ(ω1+ω2)²)`, the spectral phase a
    /// dispersive element in the pump path imprints on the pair.
    pub fn apply_pump_dispersion(&self, beta: f64) -> Self {
        let n2 = self.axis2.len();
        let g: Vec<Complex64> = self
            .g
            .iter()
            .enumerate()
            .map(|(idx, &z)| {
                let s = self.axis1[idx / n2] + self.axis2[idx % n2];
                z * Complex64::from_polar(1.0, beta * s * s)
            })
            .collect();
        let p = g.iter().map(|z| z.norm_sqr()).collect();
        Self { axis1: self.axis1.clone(), axis2: self.axis2.clone(), g, p, d1: self.d1, d2: self.d2 }
    }

    /// CSV with header `omega1,omega2,re_g,im_g`, one row per grid point.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["omega1", "omega2", "re_g", "im_g"])?;
        let n2 = self.axis2.len();
        for (idx, z) in self.g.iter().enumerate() {
            w.serialize((self.axis1[idx / n2], self.axis2[idx % n2], z.re, z.im))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). Rows may come
    /// in any order but must cover the full rectangular grid exactly once.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            omega1: f64,
            omega2: f64,
            re_g: f64,
            im_g: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["omega1", "omega2", "re_g", "im_g"] {
            return Err(Error::InvalidGrid(format!("unexpected header {headers:?}")));
        }
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<Row>() {
            rows.push(rec?);
        }
        let distinct = |f: fn(&Row) -> f64| -> Vec<f64> {
            let mut v: Vec<f64> = rows.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let axis1 = distinct(|r| r.omega1);
        let axis2 = distinct(|r| r.omega2);
        let (n1, n2) = (axis1.len(), axis2.len());
        if rows.len() != n1 * n2 {
            return Err(Error::InvalidGrid(format!("{} rows do not form a {n1}x{n2} grid", rows.len())));
        }
        let mut g = vec![None; n1 * n2];
        for (line, r) in rows.iter().enumerate() {
            let i = axis1.binary_search_by(|w| w.total_cmp(&r.omega1)).expect("value from axis");
            let j = axis2.binary_search_by(|w| w.total_cmp(&r.omega2)).expect("value from axis");
            if g[i * n2 + j].replace(Complex64::new(r.re_g, r.im_g)).is_some() {
                return Err(Error::InvalidGrid(format!("duplicate grid point on data row {}", line + 1)));
            }
        }
        let g = g.into_iter().map(|z| z.expect("all cells filled")).collect();
        Self::from_amplitudes(axis1, axis2, g)
    }
}

impl Characteristic for AmplitudeGrid {
    fn characteristic(&self, x1: f64, x2: f64) -> Result<Complex64> {
        self.numeric_characteristic(x1, x2)
    }
}

/// Conversion between physical quantities and lab units.
///
/// The effective path difference of a plate of length `L` is `Δn·L`; in lab
/// units `x = Δn·L/λ₀ = Δn·c·t/λ₀`. A frequency `ω` (rad/s) becomes the scaled
/// rate `ω·λ₀/c` (rad per λ₀), and a single-frequency variance `C` maps onto
/// the decay coefficient `B = ½·C·(λ₀/c)²`. The birefringence cancels in `B`
/// because `x` already absorbs it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitConversion {
    pub lambda0: f64,
    pub delta_n: f64,
}

impl Default for UnitConversion {
    /// λ₀ = 780 nm with the ordinary/extraordinary index difference of
    /// crystalline quartz near that wavelength.
    fn default() -> Self {
        Self { lambda0: LAMBDA0_M, delta_n: 0.0092 }
    }
}

impl UnitConversion {
    pub fn new(lambda0: f64, delta_n: f64) -> Result<Self> {
        if !(lambda0.is_finite() && lambda0 > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda0 = {lambda0} must be > 0")));
        }
        if !(delta_n.is_finite() && delta_n != 0.0) {
            return Err(Error::InvalidParameter(format!("delta_n = {delta_n} must be non-zero")));
        }
        Ok(Self { lambda0, delta_n })
    }

    pub fn x_from_time(&self, t: f64) -> f64 {
        self.delta_n * SPEED_OF_LIGHT * t / self.lambda0
    }

    pub fn time_from_x(&self, x: f64) -> f64 {
        x * self.lambda0 / (self.delta_n * SPEED_OF_LIGHT)
    }

    pub fn x_from_plate_length(&self, length: f64) -> f64 {
        self.delta_n * length / self.lambda0
    }

    pub fn plate_length_from_x(&self, x: f64) -> f64 {
        x * self.lambda0 / self.delta_n
    }

    pub fn scaled_frequency(&self, omega: f64) -> f64 {
        omega * self.lambda0 / SPEED_OF_LIGHT
    }

    pub fn angular_frequency(&self, scaled: f64) -> f64 {
        scaled * SPEED_OF_LIGHT / self.lambda0
    }

    pub fn b_from_variance(&self, variance: f64) -> f64 {
        let s = self.lambda0 / SPEED_OF_LIGHT;
        0.5 * variance * s * s
    }

    pub fn variance_from_b(&self, b: f64) -> f64 {
        let s = SPEED_OF_LIGHT / self.lambda0;
        2.0 * b * s * s
    }

    /// Angular-frequency standard deviation of a Gaussian line with the given
    /// wavelength FWHM at `center` (both in metres).
    pub fn fwhm_to_angular_sigma(fwhm: f64, center: f64) -> f64 {
        let sigma_lambda = fwhm / (2.0 * (2.0 * LN_2).sqrt());
        2.0 * PI * SPEED_OF_LIGHT * sigma_lambda / (center * center)
    }
}

/// Builds the Gaussian from the standard deviations of the sum (`σ₊`) and
/// difference (`σ₋`) angular frequencies, treated as independent:
/// `K = -(σ₋² - σ₊²)/(σ₋² + σ₊²)` and `C = (σ₊² + σ₋²)/4`.
pub fn spectrum_from_sum_difference(
    sigma_sum: f64,
    sigma_diff: f64,
    units: &UnitConversion,
) -> Result<GaussianJointSpectrum> {
    if !(sigma_sum > 0.0 && sigma_diff > 0.0) {
        return Err(Error::InvalidParameter("sum and difference widths must be > 0".into()));
    }
    let (sp, sm) = (sigma_sum * sigma_sum, sigma_diff * sigma_diff);
    let k = -(sm - sp) / (sm + sp);
    let variance = (sp + sm) / 4.0;
    GaussianJointSpectrum::new(units.b_from_variance(variance), k)
}

/// Energy-conservation toy model of the down-converted pair.
///
/// The pump envelope constrains `ω1+ω2` with the pump width, while phase
/// matching and filtering act as a Gaussian window of width `σ₋` on both the
/// sum and the difference. The effective sum width is therefore
/// `σ₊ = (σ_pump⁻² + σ₋⁻²)^(-1/2)`, which never exceeds `σ₋`, so `K ≤ 0`
/// and `K → -1` as the pump narrows.
///
/// Widths are wavelength FWHM in nm: `pump_fwhm` at the pump wavelength
/// `λ₀/2`, `phasematch_width` at `λ₀`.
pub fn pump_to_spectrum(
    pump_fwhm: f64,
    phasematch_width: f64,
    units: &UnitConversion,
) -> Result<GaussianJointSpectrum> {
    if !(pump_fwhm.is_finite() && pump_fwhm > 0.0) {
        return Err(Error::InvalidParameter(format!("pump FWHM {pump_fwhm} nm must be > 0")));
    }
    if !(phasematch_width.is_finite() && phasematch_width > 0.0) {
        return Err(Error::InvalidParameter(format!("phase-matching width {phasematch_width} nm must be > 0")));
    }
    let sigma_pump = UnitConversion::fwhm_to_angular_sigma(pump_fwhm * 1e-9, units.lambda0 / 2.0);
    let sigma_diff = UnitConversion::fwhm_to_angular_sigma(phasematch_width * 1e-9, units.lambda0);
    let sigma_sum = (sigma_pump.powi(-2) + sigma_diff.powi(-2)).powf(-0.5);
    spectrum_from_sum_difference(sigma_sum, sigma_diff, units)
}
