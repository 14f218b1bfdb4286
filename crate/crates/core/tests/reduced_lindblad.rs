use approx::assert_relative_eq;
use hybridyn::gravity_kernel::{build_dc, site_mass_field, Lattice3, MassOperatorField};
use hybridyn::hybrid_state::QuantumDensity;
use hybridyn::linalg::{c, HermitianMatrix, C64};
use hybridyn::reduced_lindblad::*;
use hybridyn::Units;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn uniform_superposition(d: usize) -> QuantumDensity {
    QuantumDensity::pure(&vec![c(1.0); d])
}

fn three_branches(l: &Lattice3) -> MassOperatorField {
    let f = [[2, 4, 4], [6, 4, 4], [6, 7, 4]].map(|t| site_mass_field(1.0, t, l).unwrap());
    MassOperatorField::from_branches(&f).unwrap()
}

#[test]
fn zero_kernel_is_unitary() {
    let u = Units::default();
    let hq = HermitianMatrix::pauli_x().add(&HermitianMatrix::pauli_z().scaled(0.4));
    let m = LindbladModel::scalar(hq.clone(), HermitianMatrix::zeros(2), HermitianMatrix::pauli_z(), 0.0, &u).unwrap();
    let rho0 = uniform_superposition(2);
    let p = LindbladParams::new(0.005, 4.0, 40).unwrap();
    let traj = evolve_lindblad(&m, &rho0, &p).unwrap();
    // Compare against exp(-i H t) rho exp(i H t) from the eigendecomposition.
    let eig = hq.matrix().clone().symmetric_eigen();
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * t)));
        let v = &eig.eigenvectors;
        let u_t = v * phases * v.adjoint();
        let want = &u_t * rho0.matrix().matrix() * u_t.adjoint();
        assert!((state.matrix().matrix() - want).norm() < 1e-9);
    }
    for p in traj.purity() {
        assert_relative_eq!(p, 1.0, epsilon = 1e-9);
    }
}

#[test]
fn commuting_dynamics_leave_populations_alone() {
    let l = Lattice3::new(10, 1.0, 0.6).unwrap();
    let u = Units::default();
    let fhat = three_branches(&l);
    let hq = HermitianMatrix::diagonal(&[0.3, -0.1, 0.8]);
    let m = build_model_from_lattice(hq, &fhat, &l, &u, KernelPreset::DerivedHalf).unwrap();
    let rho0 = QuantumDensity::pure(&[c(0.6), c(0.3), c(0.74)]);
    let traj = evolve_lindblad(&m, &rho0, &LindbladParams::new(0.01, 2.0, 20).unwrap()).unwrap();
    for i in 0..3 {
        let pops = traj.population(i);
        for p in &pops {
            assert!((p - pops[0]).abs() < 1e-12);
        }
    }
}

#[test]
fn fitted_rates_follow_the_preset() {
    let l = Lattice3::new(10, 1.0, 0.6).unwrap();
    let u = Units::new(0.9, 1.3, 1.0).unwrap();
    let fhat = three_branches(&l);
    let dc = build_dc(&l, &u).unwrap();
    let p = LindbladParams::new(0.01, 2.0, 10).unwrap();
    let mut rates = Vec::new();
    for preset in [KernelPreset::DerivedHalf, KernelPreset::Dio87] {
        let m = build_model_with_kernel(HermitianMatrix::zeros(3), &fhat, &dc, &u, preset).unwrap();
        let traj = evolve_lindblad(&m, &uniform_superposition(3), &p).unwrap();
        for pair in [[0, 1], [0, 2], [1, 2]] {
            let r = rate_report(&traj, &fhat, &dc, &u, preset, pair).unwrap();
            assert_relative_eq!(r.ratio, 1.0, max_relative = 1e-6);
            assert_relative_eq!(r.kernel_rate, preset.factor() * r.penrose_rate, max_relative = 1e-10);
        }
        rates.push(offdiagonal_decay_rate(&traj, 0, 1).unwrap());
    }
    assert_relative_eq!(rates[1], 2.0 * rates[0], max_relative = 1e-6);
}

#[test]
fn commuting_hq_does_not_change_the_rate() {
    let l = Lattice3::new(10, 1.0, 0.6).unwrap();
    let u = Units::default();
    let fhat = three_branches(&l);
    let p = LindbladParams::new(0.005, 2.0, 10).unwrap();
    let base = build_model_from_lattice(HermitianMatrix::zeros(3), &fhat, &l, &u, KernelPreset::DerivedHalf).unwrap();
    let shifted = base.with_hq(HermitianMatrix::diagonal(&[1.5, -0.7, 0.2])).unwrap();
    let r0 = offdiagonal_decay_rate(&evolve_lindblad(&base, &uniform_superposition(3), &p).unwrap(), 0, 2).unwrap();
    let r1 = offdiagonal_decay_rate(&evolve_lindblad(&shifted, &uniform_superposition(3), &p).unwrap(), 0, 2).unwrap();
    assert_relative_eq!(r0, r1, max_relative = 1e-9);
}

#[test]
fn exponential_fit_recovers_synthetic_rate() {
    let gamma = 0.37;
    let times: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
    let states = times
        .iter()
        .map(|t| {
            let off = 0.5 * (-gamma * t).exp();
            let m = DMatrix::from_row_slice(2, 2, &[c(0.5), c(off), c(off), c(0.5)]);
            QuantumDensity::new(HermitianMatrix::hermitize(&m)).unwrap()
        })
        .collect();
    let traj = QuantumTrajectory::new(times, states).unwrap();
    assert_relative_eq!(offdiagonal_decay_rate(&traj, 0, 1).unwrap(), gamma, max_relative = 1e-3);
    assert!(offdiagonal_decay_rate(&traj, 0, 0).is_err());
}

#[test]
fn unitary_trajectory_is_not_fitted() {
    let u = Units::default();
    let m = LindbladModel::scalar(HermitianMatrix::pauli_z(), HermitianMatrix::zeros(2), HermitianMatrix::pauli_z(), 0.0, &u)
        .unwrap();
    let traj = evolve_lindblad(&m, &uniform_superposition(2), &LindbladParams::new(0.01, 2.0, 10).unwrap()).unwrap();
    match offdiagonal_decay_rate(&traj, 0, 1) {
        Ok(rate) => assert!(rate.abs() < 1e-8),
        Err(e) => assert!(matches!(e, hybridyn::error::LindbladError::InsufficientDecay { .. })),
    }
}

#[test]
fn mismatched_shapes_are_rejected() {
    let u = Units::default();
    let k = DMatrix::from_element(2, 2, 1.0);
    let ops = vec![HermitianMatrix::pauli_z()];
    assert!(LindbladModel::new(HermitianMatrix::zeros(2), HermitianMatrix::zeros(2), ops, k, &u, KernelPreset::DerivedHalf)
        .is_err());
    assert!(LindbladParams::new(-0.1, 1.0, 1).is_err());
}

fn hermitian(entries: &[f64]) -> HermitianMatrix {
    let m = DMatrix::from_fn(3, 3, |i, j| C64::new(entries[3 * i + j], entries[9 + 3 * i + j]));
    HermitianMatrix::hermitize(&m)
}

fn random_model(h: &[f64], a: &[f64], b: &[f64], k: f64) -> LindbladModel {
    let kernel = DMatrix::from_row_slice(2, 2, &[1.0, k, k, 1.0]);
    LindbladModel::new(hermitian(h), HermitianMatrix::zeros(3), vec![hermitian(a), hermitian(b)], kernel, &Units::default(), KernelPreset::DerivedHalf)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trace_hermiticity_and_purity(
        h in prop::collection::vec(-1.0f64..1.0, 18),
        a in prop::collection::vec(-1.0f64..1.0, 18),
        b in prop::collection::vec(-1.0f64..1.0, 18),
        k in -0.9f64..0.9,
        v in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let m = random_model(&h, &a, &b, k);
        let psi: Vec<C64> = (0..3).map(|i| C64::new(v[i], v[3 + i])).collect();
        prop_assume!(psi.iter().map(|z| z.norm_sqr()).sum::<f64>() > 1e-2);
        let traj = evolve_lindblad(&m, &QuantumDensity::pure(&psi), &LindbladParams::new(0.005, 1.0, 10).unwrap()).unwrap();
        prop_assert!(traj.max_trace_error < 1e-10);
        prop_assert!(traj.max_hermiticity_residual < 1e-10);
        prop_assert!(traj.min_eigenvalue > -1e-9);
        let purity = traj.purity();
        for w in purity.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10);
        }
    }
}
