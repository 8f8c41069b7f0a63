//! Polarization states of the photon pair and the nonlocal dephasing map.
//!
//! Basis ordering throughout is `HH, HV, VH, VV`, i.e. index `2·λ₁ + λ₂` with
//! `H = 0` and `V = 1`.

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{decoherence_set, AmplitudeGrid, DecoherenceSet};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest eigenvalue tolerated before a matrix is declared non-positive.
pub const PSD_FLOOR: f64 = -1e-9;
/// Slack above one allowed for decoherence moduli coming from quadrature.
pub const MODULUS_SLACK: f64 = 1e-9;

pub const BASIS_LABELS: [&str; 4] = ["HH", "HV", "VH", "VV"];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Pure polarization state `a|HH⟩ + b|HV⟩ + c|VH⟩ + d|VV⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureTwoQubitState {
    amps: [Complex64; 4],
}

impl PureTwoQubitState {
    /// Requires unit norm within `1e-10`.
    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Result<Self> {
        let amps = [a, b, c, d];
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if !((norm - 1.0).abs() <= 1e-10) {
            return Err(Error::InvalidState(format!("state norm {norm} is not 1")));
        }
        Ok(Self { amps })
    }

    /// Rescales arbitrary (non-zero) amplitudes to unit norm.
    pub fn normalized(amps: [Complex64; 4]) -> Result<Self> {
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        Ok(Self { amps: amps.map(|z| z / norm) })
    }

    /// `(|HH⟩ + |VV⟩)/√2`.
    pub fn bell_plus() -> Self {
        let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { amps: [s, ZERO, ZERO, s] }
    }

    /// `(|HH⟩ - |VV⟩)/√2`.
    pub fn bell_minus() -> Self {
        let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { amps: [s, ZERO, ZERO, -s] }
    }

    /// Computational basis state by index (0..4 in `HH, HV, VH, VV` order).
    pub fn basis(index: usize) -> Self {
        let mut amps = [ZERO; 4];
        amps[index] = Complex64::new(1.0, 0.0);
        Self { amps }
    }

    /// Haar-random pure state: a normalized vector of i.i.d. complex normals.
    pub fn random_haar<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let amps = std::array::from_fn(|_| {
                Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
            });
            if let Ok(s) = Self::normalized(amps) {
                return s;
            }
        }
    }

    pub fn amplitudes(&self) -> &[Complex64; 4] {
        &self.amps
    }

    pub fn to_vector(&self) -> Vector4<Complex64> {
        Vector4::from_column_slice(&self.amps)
    }
}

fn check_density(m: &DMatrix<Complex64>) -> Result<()> {
    if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::InvalidState("non-finite entry".into()));
    }
    let skew = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if skew > HERMITIAN_TOL {
        return Err(Error::InvalidState(format!("not Hermitian (deviation {skew:e})")));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(Error::InvalidState(format!("trace {tr} is not 1")));
    }
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let min = herm.symmetric_eigenvalues().min();
    if min < PSD_FLOOR {
        return Err(Error::InvalidState(format!("not positive semidefinite (eigenvalue {min:e})")));
    }
    Ok(())
}

/// Two-photon polarization density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix4(Matrix4<Complex64>);

impl DensityMatrix4 {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn from_matrix(m: Matrix4<Complex64>) -> Result<Self> {
        check_density(&DMatrix::from_column_slice(m.nrows(), m.ncols(), m.as_slice()))?;
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix4<Complex64>) -> Self {
        Self(m)
    }

    pub fn pure(psi: &PureTwoQubitState) -> Self {
        let v = psi.to_vector();
        Self(v * v.adjoint())
    }

    /// `I/4`.
    pub fn maximally_mixed() -> Self {
        Self(Matrix4::identity() * Complex64::new(0.25, 0.0))
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.0
    }

    pub fn validate(&self) -> Result<()> {
        check_density(&DMatrix::from_column_slice(4, 4, self.0.as_slice()))
    }

    pub fn populations(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.0[(i, i)].re)
    }

    /// Conjugation by a 4×4 unitary.
    pub fn transformed(&self, u: &Matrix4<Complex64>) -> Self {
        Self(u * self.0 * u.adjoint())
    }

    pub fn to_json(&self) -> DensityMatrixJson {
        DensityMatrixJson {
            basis: BASIS_LABELS.map(String::from).to_vec(),
            entries: (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| [self.0[(r, c)].re, self.0[(r, c)].im]).collect(),
        }
    }

    pub fn from_json(json: &DensityMatrixJson) -> Result<Self> {
        if json.basis.iter().map(String::as_str).ne(BASIS_LABELS) {
            return Err(Error::InvalidState(format!("unexpected basis {:?}", json.basis)));
        }
        if json.entries.len() != 16 {
            return Err(Error::InvalidState(format!("{} entries, expected 16", json.entries.len())));
        }
        let m = Matrix4::from_fn(|r, c| {
            let [re, im] = json.entries[4 * r + c];
            Complex64::new(re, im)
        });
        Self::from_matrix(m)
    }
}

/// JSON shape of an exported [`DensityMatrix4`]: 16 `[re, im]` pairs,
/// row-major, in the order given by `basis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityMatrixJson {
    pub basis: Vec<String>,
    pub entries: Vec<[f64; 2]>,
}

/// Single-photon polarization density matrix in the `H, V` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix2(Matrix2<Complex64>);

impl DensityMatrix2 {
    pub fn from_matrix(m: Matrix2<Complex64>) -> Result<Self> {
        check_density(&DMatrix::from_column_slice(m.nrows(), m.ncols(), m.as_slice()))?;
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix2<Complex64> {
        &self.0
    }

    /// Off-diagonal element `⟨H|ρ|V⟩`.
    pub fn coherence(&self) -> Complex64 {
        self.0[(0, 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    One,
    Two,
}

impl TryFrom<u8> for Arm {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Arm::One),
            2 => Ok(Arm::Two),
            other => Err(Error::InvalidArm(other)),
        }
    }
}

/// Evolves a pure initial state through the dephasing map defined by `dec`.
///
/// Populations are untouched; each coherence `ρ_ij` is multiplied by the
/// decoherence function picked out by which arms differ in polarization
/// between `i` and `j`. The result is positive whenever `dec` is the
/// decoherence set of an actual joint frequency distribution.
pub fn apply_dephasing(psi: &PureTwoQubitState, dec: &DecoherenceSet) -> Result<DensityMatrix4> {
    for (name, z) in dec.entries() {
        let modulus = z.norm();
        if !(modulus <= 1.0 + MODULUS_SLACK) {
            return Err(Error::DecoherenceOutOfRange { name, modulus });
        }
    }
    let one = Complex64::new(1.0, 0.0);
    // factor[i][j] for i < j
    let factor = [
        [one, dec.k2, dec.k1, dec.k12],
        [one, one, dec.l12, dec.k1],
        [one, one, one, dec.k2],
        [one, one, one, one],
    ];
    let c = psi.amplitudes();
    let m = Matrix4::from_fn(|i, j| {
        let base = c[i] * c[j].conj();
        match i.cmp(&j) {
            std::cmp::Ordering::Less => base * factor[i][j],
            std::cmp::Ordering::Equal => Complex64::new(base.re, 0.0),
            std::cmp::Ordering::Greater => base * factor[j][i].conj(),
        }
    });
    Ok(DensityMatrix4::from_matrix_unchecked(m))
}

/// Partial trace over the other photon.
pub fn reduce_to_arm(rho: &DensityMatrix4, arm: Arm) -> DensityMatrix2 {
    let m = rho.matrix();
    let r = Matrix2::from_fn(|a, b| match arm {
        Arm::One => (0..2).map(|l| m[(2 * a + l, 2 * b + l)]).sum(),
        Arm::Two => (0..2).map(|l| m[(2 * l + a, 2 * l + b)]).sum(),
    });
    DensityMatrix2(r)
}

/// True when the map is a product of local maps:
/// `κ12 = κ1·κ2` and `Λ12 = κ1·κ2*` within `tol`.
///
/// Panics if `tol` is not positive.
pub fn is_factorized(dec: &DecoherenceSet, tol: f64) -> bool {
    assert!(tol > 0.0, "tolerance must be positive");
    (dec.k12 - dec.k1 * dec.k2).norm() <= tol && (dec.l12 - dec.k1 * dec.k2.conj()).norm() <= tol
}

/// Brute-force evolution of polarization ⊗ frequency followed by a trace over
/// the frequency grid.
///
/// A `V`-polarized photon in arm `i` with frequency `ω` picks up the relative
/// phase `exp(i·ω·x_i)` with respect to `H`; the common phase is dropped.
pub fn unitary_grid_evolution(
    psi: &PureTwoQubitState,
    grid: &AmplitudeGrid,
    x1: f64,
    x2: f64,
) -> Result<DensityMatrix4> {
    grid.check_aliasing(x1, x2)?;
    // conj of exp(-iωx) is the V phase
    let v1: Vec<Complex64> = AmplitudeGrid::axis_phasors(grid.axis1(), x1).iter().map(|z| z.conj()).collect();
    let v2: Vec<Complex64> = AmplitudeGrid::axis_phasors(grid.axis2(), x2).iter().map(|z| z.conj()).collect();
    let [a, b, c, d] = *psi.amplitudes();
    let n2 = grid.axis2().len();
    let mut acc = [[ZERO; 4]; 4];
    for (row, &p1) in grid.amplitudes().chunks_exact(n2).zip(&v1) {
        for (&g, &p2) in row.iter().zip(&v2) {
            let amp = [a * g, b * g * p2, c * g * p1, d * g * p1 * p2];
            for i in 0..4 {
                for j in i..4 {
                    acc[i][j] += amp[i] * amp[j].conj();
                }
            }
        }
    }
    let area = grid.cell_area();
    let m = Matrix4::from_fn(|i, j| if i <= j { acc[i][j] * area } else { (acc[j][i] * area).conj() });
    Ok(DensityMatrix4::from_matrix_unchecked(m))
}

/// The composite route: quadrature characteristic function, decoherence set,
/// then the closed-form dephasing map.
pub fn grid_dephasing(psi: &PureTwoQubitState, grid: &AmplitudeGrid, x1: f64, x2: f64) -> Result<DensityMatrix4> {
    apply_dephasing(psi, &decoherence_set(grid, x1, x2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{GaussianJointSpectrum, GridOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_diff(a: &Matrix4<Complex64>, b: &Matrix4<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn state_normalization_enforced() {
        assert!(PureTwoQubitState::new(c(1.0, 0.0), c(1.0, 0.0), ZERO, ZERO).is_err());
        let s = PureTwoQubitState::normalized([c(1.0, 0.0), c(0.0, 1.0), ZERO, ZERO]).unwrap();
        let n: f64 = s.amplitudes().iter().map(|z| z.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-15);
        assert!(PureTwoQubitState::normalized([ZERO; 4]).is_err());
    }

    #[test]
    fn identity_set_returns_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let psi = PureTwoQubitState::random_haar(&mut rng);
            let rho = apply_dephasing(&psi, &DecoherenceSet::ONES).unwrap();
            assert!(max_diff(rho.matrix(), DensityMatrix4::pure(&psi).matrix()) < 1e-15);
        }
    }

    #[test]
    fn bell_state_corner_scaling() {
        let dec = DecoherenceSet { k12: c(0.5, 0.0), ..DecoherenceSet::ONES };
        let rho = apply_dephasing(&PureTwoQubitState::bell_plus(), &dec).unwrap();
        let m = rho.matrix();
        assert!((m[(0, 3)] - c(0.25, 0.0)).norm() < 1e-15);
        assert!((m[(3, 0)] - c(0.25, 0.0)).norm() < 1e-15);
        let pops = rho.populations();
        for (p, want) in pops.iter().zip([0.5, 0.0, 0.0, 0.5]) {
            assert!((p - want).abs() < 1e-15);
        }
        let rho = apply_dephasing(&PureTwoQubitState::bell_minus(), &dec).unwrap();
        assert!((rho.matrix()[(0, 3)] + c(0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn entries_follow_the_dephasing_table() {
        let psi = PureTwoQubitState::normalized([c(0.3, 0.1), c(-0.2, 0.5), c(0.4, -0.3), c(0.1, 0.6)]).unwrap();
        let dec = DecoherenceSet { k1: c(0.8, 0.1), k2: c(0.3, -0.5), k12: c(-0.2, 0.4), l12: c(0.6, 0.6) };
        let rho = apply_dephasing(&psi, &dec).unwrap();
        let [a, b, cc, d] = *psi.amplitudes();
        let m = rho.matrix();
        let expect = [
            ((0, 1), a * b.conj() * dec.k2),
            ((0, 2), a * cc.conj() * dec.k1),
            ((0, 3), a * d.conj() * dec.k12),
            ((1, 2), b * cc.conj() * dec.l12),
            ((1, 3), b * d.conj() * dec.k1),
            ((2, 3), cc * d.conj() * dec.k2),
        ];
        for ((i, j), z) in expect {
            assert!((m[(i, j)] - z).norm() < 1e-15);
            assert!((m[(j, i)] - z.conj()).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_supernormal_decoherence() {
        let dec = DecoherenceSet { l12: c(1.0 + 1e-6, 0.0), ..DecoherenceSet::ONES };
        let err = apply_dephasing(&PureTwoQubitState::bell_plus(), &dec).unwrap_err();
        assert!(matches!(err, Error::DecoherenceOutOfRange { name: "L12", .. }));
        let dec = DecoherenceSet { k1: c(1.0 + 5e-10, 0.0), ..DecoherenceSet::ONES };
        assert!(apply_dephasing(&PureTwoQubitState::bell_plus(), &dec).is_ok());
    }

    #[test]
    fn populations_are_constants_of_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let psi = PureTwoQubitState::random_haar(&mut rng);
            let unit = |rng: &mut ChaCha8Rng| Complex64::from_polar(rng.random::<f64>(), rng.random::<f64>() * 6.3);
            let dec = DecoherenceSet { k1: unit(&mut rng), k2: unit(&mut rng), k12: unit(&mut rng), l12: unit(&mut rng) };
            let rho = apply_dephasing(&psi, &dec).unwrap();
            for (p, z) in rho.populations().iter().zip(psi.amplitudes()) {
                assert!((p - z.norm_sqr()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bell_marginal_is_maximally_mixed() {
        let rho = apply_dephasing(&PureTwoQubitState::bell_plus(), &DecoherenceSet::ONES).unwrap();
        let r1 = reduce_to_arm(&rho, Arm::One);
        let half = Matrix2::identity() * c(0.5, 0.0);
        assert!((r1.matrix() - half).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn product_state_marginal_is_pure() {
        let dec = DecoherenceSet { k1: c(0.2, 0.1), k2: c(0.4, 0.0), k12: c(0.1, 0.0), l12: c(0.05, 0.0) };
        let rho = apply_dephasing(&PureTwoQubitState::basis(1), &dec).unwrap();
        let r2 = reduce_to_arm(&rho, Arm::Two);
        let vv = Matrix2::new(ZERO, ZERO, ZERO, c(1.0, 0.0));
        assert!((r2.matrix() - vv).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn marginals_are_blind_to_the_nonlocal_factor() {
        let psi = PureTwoQubitState::bell_plus();
        let base = DecoherenceSet { k1: c(0.6, 0.0), k2: c(0.7, 0.0), ..DecoherenceSet::ONES };
        let hi = apply_dephasing(&psi, &DecoherenceSet { k12: c(0.9, 0.0), ..base }).unwrap();
        let lo = apply_dephasing(&psi, &DecoherenceSet { k12: c(0.1, 0.0), ..base }).unwrap();
        for arm in [Arm::One, Arm::Two] {
            assert_eq!(reduce_to_arm(&hi, arm), reduce_to_arm(&lo, arm));
        }
    }

    #[test]
    fn marginal_coherences_match_displayed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = PureTwoQubitState::random_haar(&mut rng);
        let dec = DecoherenceSet { k1: c(0.5, 0.2), k2: c(-0.3, 0.4), k12: c(0.1, 0.1), l12: c(0.2, -0.1) };
        let rho = apply_dephasing(&psi, &dec).unwrap();
        let [a, b, cc, d] = *psi.amplitudes();
        let r1 = reduce_to_arm(&rho, Arm::One);
        let r2 = reduce_to_arm(&rho, Arm::Two);
        assert!((r1.coherence() - (a * cc.conj() + b * d.conj()) * dec.k1).norm() < 1e-15);
        assert!((r2.coherence() - (a * b.conj() + cc * d.conj()) * dec.k2).norm() < 1e-15);
        assert!((r1.matrix()[(0, 0)].re - (a.norm_sqr() + b.norm_sqr())).abs() < 1e-15);
    }

    #[test]
    fn arm_index_parsing() {
        assert_eq!(Arm::try_from(1).unwrap(), Arm::One);
        assert_eq!(Arm::try_from(2).unwrap(), Arm::Two);
        assert!(matches!(Arm::try_from(3), Err(Error::InvalidArm(3))));
    }

    #[test]
    fn factorization_predicate() {
        assert!(is_factorized(&DecoherenceSet::ONES, 1e-12));
        let s = GaussianJointSpectrum::from_u(2.5, 0.0).unwrap();
        for (x1, x2) in [(0.0, 0.0), (50.0, 120.0), (199.0, 199.0)] {
            assert!(is_factorized(&decoherence_set(&s, x1, x2).unwrap(), 1e-9));
        }
        // exp(-B(x1²+x2²-2·0.92·x1x2)) vs exp(-B(x1²+x2²)): cross factor exp(2B·0.92·1e4)
        let s = GaussianJointSpectrum::from_u(2.5, -0.92).unwrap();
        let dec = decoherence_set(&s, 100.0, 100.0).unwrap();
        assert!(!is_factorized(&dec, 1e-3));
    }

    #[test]
    fn density_validation() {
        let psi = PureTwoQubitState::bell_plus();
        assert!(DensityMatrix4::pure(&psi).validate().is_ok());
        let mut m = *DensityMatrix4::maximally_mixed().matrix();
        m[(0, 1)] = c(0.1, 0.0);
        assert!(DensityMatrix4::from_matrix(m).is_err());
        let mut m = *DensityMatrix4::maximally_mixed().matrix();
        m[(0, 0)] = c(0.5, 0.0);
        assert!(DensityMatrix4::from_matrix(m).is_err());
        let m = Matrix4::from_diagonal(&Vector4::new(c(1.1, 0.0), c(-0.1, 0.0), ZERO, ZERO));
        assert!(DensityMatrix4::from_matrix(m).is_err());
    }

    #[test]
    fn json_export_layout() {
        let rho = apply_dephasing(&PureTwoQubitState::bell_plus(), &DecoherenceSet { k12: c(0.3, 0.4), ..DecoherenceSet::ONES }).unwrap();
        let json = serde_json::to_value(rho.to_json()).unwrap();
        assert_eq!(json["basis"], serde_json::json!(["HH", "HV", "VH", "VV"]));
        let entries = json["entries"].as_array().unwrap();
        assert_eq!(entries.len(), 16);
        let corner: [f64; 2] = serde_json::from_value(entries[3].clone()).unwrap();
        assert!((corner[0] - 0.15).abs() < 1e-15 && (corner[1] - 0.2).abs() < 1e-15);
        let back: DensityMatrixJson = serde_json::from_value(json).unwrap();
        assert_eq!(DensityMatrix4::from_json(&back).unwrap(), rho);
    }

    #[test]
    fn grid_evolution_at_origin_is_the_projector() {
        let s = GaussianJointSpectrum::from_u(2.0, -0.5).unwrap();
        let grid = AmplitudeGrid::gaussian(&s, GridOptions { span_sigmas: 6.0, points: 64 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psi = PureTwoQubitState::random_haar(&mut rng);
        let rho = unitary_grid_evolution(&psi, &grid, 0.0, 0.0).unwrap();
        assert!(max_diff(rho.matrix(), DensityMatrix4::pure(&psi).matrix()) < 1e-12);
    }

    #[test]
    fn grid_evolution_matches_composite_route() {
        let s = GaussianJointSpectrum::with_means(1.1e-4, -0.8, 0.02, -0.01).unwrap();
        let grid = AmplitudeGrid::gaussian(&s, GridOptions { span_sigmas: 6.0, points: 96 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = PureTwoQubitState::random_haar(&mut rng);
        for (x1, x2) in [(199.0, 0.0), (120.0, 80.0), (199.0, 199.0)] {
            let brute = unitary_grid_evolution(&psi, &grid, x1, x2).unwrap();
            let composite = grid_dephasing(&psi, &grid, x1, x2).unwrap();
            assert!(max_diff(brute.matrix(), composite.matrix()) < 1e-9);
            brute.validate().unwrap();
        }
    }
}
