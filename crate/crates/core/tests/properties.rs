use dephasing_core::analysis::{blp_measure, concurrence, fit_consecutive, trace_distance, TraceDistanceTrajectory, TracePoint};
use dephasing_core::channel::{apply_dephasing, reduce_to_arm, Arm, DensityMatrix4, PureTwoQubitState};
use dephasing_core::schedule::{sample_points, trajectory, PlateSchedule, ARM_MAX, TOTAL_MAX};
use dephasing_core::spectra::{decoherence_set, GaussianJointSpectrum};
use dephasing_core::Complex64;
use nalgebra::Matrix4;
use proptest::prelude::*;

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| Complex64::new(re, im))
}

fn state() -> impl Strategy<Value = PureTwoQubitState> {
    prop::array::uniform4(complex())
        .prop_filter("non-zero", |a| a.iter().map(|z| z.norm_sqr()).sum::<f64>() > 1e-3)
        .prop_map(|a| PureTwoQubitState::normalized(a).unwrap())
}

fn spectrum() -> impl Strategy<Value = GaussianJointSpectrum> {
    (0.0f64..10.0, -1.0f64..=1.0, -0.05f64..0.05, -0.05f64..0.05)
        .prop_map(|(u, k, m1, m2)| GaussianJointSpectrum::with_means(u / (ARM_MAX * ARM_MAX), k, m1, m2).unwrap())
}

fn evolved(psi: &PureTwoQubitState, spec: &GaussianJointSpectrum, x1: f64, x2: f64) -> DensityMatrix4 {
    apply_dephasing(psi, &decoherence_set(spec, x1, x2).unwrap()).unwrap()
}

/// Random unitary from the QR decomposition of a complex matrix.
fn unitary(entries: [Complex64; 16]) -> Matrix4<Complex64> {
    Matrix4::from_column_slice(&entries).qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn characteristic_bounded(spec in spectrum(), x1 in -398.0f64..398.0, x2 in -398.0f64..398.0) {
        prop_assert!(spec.gaussian_characteristic(x1, x2).norm() <= 1.0 + 1e-15);
        let back = spec.gaussian_characteristic(-x1, -x2);
        prop_assert!((back - spec.gaussian_characteristic(x1, x2).conj()).norm() < 1e-15);
    }

    #[test]
    fn dephased_states_are_valid(psi in state(), spec in spectrum(), x1 in 0.0f64..199.0, x2 in 0.0f64..199.0) {
        let rho = evolved(&psi, &spec, x1, x2);
        prop_assert!(rho.validate().is_ok());
        for (p, z) in rho.populations().iter().zip(psi.amplitudes()) {
            prop_assert!((p - z.norm_sqr()).abs() < 1e-15);
        }
    }

    #[test]
    fn marginals_dephase_monotonically(psi in state(), spec in spectrum(), x2 in 0.0f64..199.0) {
        let spec = GaussianJointSpectrum { m1: 0.0, m2: 0.0, ..spec };
        let mut last1 = f64::INFINITY;
        let mut last2 = f64::INFINITY;
        for i in 0..=40 {
            let x = i as f64 * 199.0 / 40.0;
            let c1 = reduce_to_arm(&evolved(&psi, &spec, x, x2), Arm::One).coherence().norm();
            let c2 = reduce_to_arm(&evolved(&psi, &spec, x2, x), Arm::Two).coherence().norm();
            prop_assert!(c1 <= last1 + 1e-15 && c2 <= last2 + 1e-15);
            last1 = c1;
            last2 = c2;
        }
    }

    #[test]
    fn schedule_conserves_total(o in 0.0f64..=199.0, x in 0.0f64..=398.0, eps in 0.0f64..1.0) {
        let s = PlateSchedule::new(o).unwrap();
        let (x1, x2) = s.times_at(x).unwrap();
        prop_assert!((x1 + x2 - x).abs() <= 1e-12 * x.max(1.0));
        prop_assert!((0.0..=ARM_MAX).contains(&x1) && (0.0..=ARM_MAX).contains(&x2));
        let y = (x + eps).min(TOTAL_MAX);
        let (y1, y2) = s.times_at(y).unwrap();
        prop_assert!(y1 >= x1 && y2 >= x2);
        prop_assert!(y1 - x1 <= (y - x) + 1e-12 && y2 - x2 <= (y - x) + 1e-12);
    }

    #[test]
    fn trace_distance_metric(a in state(), b in state(), c in state(), spec in spectrum(), x1 in 0.0f64..199.0, x2 in 0.0f64..199.0) {
        let (ra, rb, rc) = (evolved(&a, &spec, x1, x2), evolved(&b, &spec, x1, x2), DensityMatrix4::pure(&c));
        let ab = trace_distance(&ra, &rb);
        prop_assert_eq!(ab, trace_distance(&rb, &ra));
        prop_assert!(trace_distance(&ra, &ra) < 1e-12);
        prop_assert!(ab <= trace_distance(&ra, &rc) + trace_distance(&rc, &rb) + 1e-10);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn trace_distance_unitarily_invariant(a in state(), b in state(), entries in prop::array::uniform16(complex())) {
        let u = unitary(entries);
        let (ra, rb) = (DensityMatrix4::pure(&a), DensityMatrix4::pure(&b));
        let before = trace_distance(&ra, &rb);
        let after = trace_distance(&ra.transformed(&u), &rb.transformed(&u));
        prop_assert!((before - after).abs() < 1e-10);
    }

    #[test]
    fn concurrence_tracks_nonlocal_coherence(spec in spectrum(), x1 in 0.0f64..199.0, x2 in 0.0f64..199.0) {
        let dec = decoherence_set(&spec, x1, x2).unwrap();
        let rho = apply_dephasing(&PureTwoQubitState::bell_plus(), &dec).unwrap();
        prop_assert!((concurrence(&rho).unwrap() - dec.k12.norm()).abs() < 1e-10);
    }

    #[test]
    fn blp_is_non_negative(ds in prop::collection::vec(0.0f64..1.0, 2..50)) {
        let pts = ds.iter().enumerate().map(|(i, &d)| TracePoint { x: i as f64, d, sigma: None }).collect();
        prop_assert!(blp_measure(&TraceDistanceTrajectory::new(pts).unwrap()).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn endpoint_is_offset_independent(u in 0.1f64..8.0, k in -1.0f64..=0.0, o in 0.0f64..=199.0) {
        let spec = GaussianJointSpectrum::from_u(u, k).unwrap();
        let pair = (PureTwoQubitState::bell_plus(), PureTwoQubitState::bell_minus());
        let a = trajectory(&spec, &PlateSchedule::new(o).unwrap(), 199.0, (&pair.0, &pair.1)).unwrap();
        let b = trajectory(&spec, &PlateSchedule::consecutive(), 199.0, (&pair.0, &pair.1)).unwrap();
        prop_assert!((a.points().last().unwrap().d - b.points().last().unwrap().d).abs() < 1e-12);
    }

    #[test]
    fn noiseless_fit_round_trip(a in 0.8f64..1.0, u in 1.0f64..6.0, k in -0.98f64..-0.05) {
        let b = u / (ARM_MAX * ARM_MAX);
        let sched = PlateSchedule::consecutive();
        let pts = sample_points(5.0).unwrap().into_iter().map(|x| {
            let (x1, x2) = sched.times_at(x).unwrap();
            TracePoint { x, d: a * (-b * (x1 * x1 + x2 * x2 + 2.0 * k * x1 * x2)).exp(), sigma: None }
        }).collect();
        let fit = fit_consecutive(&TraceDistanceTrajectory::new(pts).unwrap(), ARM_MAX).unwrap();
        prop_assert!((fit.a - a).abs() < 1e-6);
        prop_assert!((fit.b - b).abs() * ARM_MAX * ARM_MAX < 1e-6);
        prop_assert!((fit.k().unwrap() - k).abs() < 1e-6);
    }
}
