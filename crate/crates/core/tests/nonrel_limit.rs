use approx::{assert_abs_diff_eq, assert_relative_eq};
use hybridyn::evolution::{evolve, IntegratorParams, Monitors, NoiseModel, Scheme};
use hybridyn::hybrid_state::*;
use hybridyn::linalg::{c, HermitianMatrix};
use hybridyn::nonrel_limit::*;
use hybridyn::Units;

fn mode_grid(phi: f64, xi: f64, n: usize) -> PhaseGrid {
    PhaseGrid::new(Axis::centered(phi, n).unwrap(), Axis::centered(xi, n).unwrap()).unwrap()
}

fn model(c_value: f64, fhat: HermitianMatrix, noise: NoiseModel) -> (ModeModel, hybridyn::evolution::HybridHamiltonian) {
    let g = mode_grid(8.0, 2.5, 48);
    build_mode_model(1.0, c_value, fhat, HermitianMatrix::zeros(2), Units::default(), noise, g).unwrap()
}

#[test]
fn free_mode_frequency_and_stiffness() {
    let (m, _) = model(1.0, HermitianMatrix::zeros(2), NoiseModel::scalar(0.0, 0.0).unwrap());
    let pi = std::f64::consts::PI;
    assert_relative_eq!(m.frequency(), (4.0 * pi).sqrt(), max_relative = 1e-14);
    let (m2, _) = model(2.0, HermitianMatrix::zeros(2), NoiseModel::scalar(0.0, 0.0).unwrap());
    assert_relative_eq!(m2.xi_coefficient(), 4.0 * m.xi_coefficient(), max_relative = 1e-14);
    assert_relative_eq!(m2.period(), 0.5 * m.period(), max_relative = 1e-14);
}

#[test]
fn equilibrium_outside_grid_is_rejected() {
    let g = mode_grid(3.0, 2.0, 32);
    let fhat = HermitianMatrix::pauli_z().scaled(3.0);
    let noise = NoiseModel::scalar(0.0, 0.0).unwrap();
    assert!(build_mode_model(1.0, 1.0, fhat, HermitianMatrix::zeros(2), Units::default(), noise, g).is_err());
}

#[test]
fn analog_potential_is_minus_f_squared_over_two_kappa() {
    let fhat = HermitianMatrix::diagonal(&[0.8, -0.3]);
    let g = mode_grid(8.0, 2.5, 32);
    let noise = NoiseModel::scalar(0.4, 1.0).unwrap();
    let (m, _) = build_mode_model(2.0, 1.0, fhat, HermitianMatrix::pauli_x(), Units::default(), noise, g).unwrap();
    let lind = m.analog_lindblad().unwrap();
    let hg = lind.hg().matrix();
    assert_relative_eq!(hg[(0, 0)].re, -0.64 / 4.0, max_relative = 1e-14);
    assert_relative_eq!(hg[(1, 1)].re, -0.09 / 4.0, max_relative = 1e-14);
    assert_eq!(hg[(0, 1)].norm(), 0.0);
    assert_eq!(lind.kernel()[(0, 0)], 0.4);
    assert_eq!(lind.hq(), &m.hq);
}

#[test]
fn branch_equilibrated_state_has_zero_residuals() {
    let (m, _) = model(1.0, HermitianMatrix::pauli_z().scaled(0.5), NoiseModel::scalar(0.0, 0.0).unwrap());
    let xi_width = (m.kappa / (2.0 * m.xi_coefficient())).sqrt();
    // Diagonal quantum state: no interbranch overlap enters the moments.
    let diag = QuantumDensity::new(HermitianMatrix::diagonal(&[0.3, 0.7])).unwrap();
    let rho = m.branch_equilibrated_state(&diag, 1.0, xi_width).unwrap();
    assert_abs_diff_eq!(mean_field_residual(&rho, &m), 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(post_mean_field_residual(&rho, &m), 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(xi_moment_norm(&rho), 0.0, epsilon = 1e-12);
    // A coherent state still satisfies the scalar relation.
    let plus = QuantumDensity::pure(&[c(1.0), c(1.0)]);
    let rho = m.branch_equilibrated_state(&plus, 1.0, xi_width).unwrap();
    assert_abs_diff_eq!(mean_field_residual(&rho, &m), 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(partial_moment(&rho, 1).op_norm(), 0.0, epsilon = 1e-12);
}

#[test]
fn xi_symmetric_product_has_no_xi_moment() {
    let g = mode_grid(8.0, 2.5, 40);
    let rho = product_state(
        &QuantumDensity::pure(&[c(0.6), c(0.8)]),
        &ClassicalDensity::gaussian(&g, &[1.2, 0.0], &[1.0, 0.4]).unwrap(),
    )
    .unwrap();
    assert_abs_diff_eq!(xi_moment_norm(&rho), 0.0, epsilon = 1e-12);
}

fn ehrenfest_residual(dc: f64) -> EhrenfestResidual {
    let units = Units::default();
    let noise = if dc > 0.0 { NoiseModel::saturated(dc, &units).unwrap() } else { NoiseModel::scalar(0.0, 0.0).unwrap() };
    let g = mode_grid(10.0, 6.0, 64);
    let fhat = HermitianMatrix::pauli_z().scaled(0.5);
    let (m, h) = build_mode_model(1.0, 0.5, fhat, HermitianMatrix::pauli_x(), units, noise.clone(), g).unwrap();
    // Widths in equipartition, so the cloud rotates without breathing.
    let xi_width = 0.9 * (m.kappa / (2.0 * m.xi_coefficient())).sqrt();
    let rho0 = product_state(
        &QuantumDensity::pure(&[c(0.6), c(0.8)]),
        &ClassicalDensity::gaussian(&m.grid, &[1.0, 0.0], &[0.9, xi_width]).unwrap(),
    )
    .unwrap();
    let params = IntegratorParams {
        dt: 0.002,
        t_final: 0.3,
        record_every: 1,
        monitors: Monitors::default(),
        scheme: Scheme::Spectral,
    };
    let ev = evolve(&h, &rho0, &noise, &units, &params).unwrap();
    ehrenfest_check(&moment_report(&ev, &m), &m)
}

#[test]
fn ehrenfest_relations_hold_for_any_noise() {
    let quiet = ehrenfest_residual(0.0);
    let noisy = ehrenfest_residual(0.5);
    assert!(quiet.max() < 1e-3, "{quiet:?}");
    assert!(noisy.max() < 1e-3, "{noisy:?}");
    assert_abs_diff_eq!(quiet.phi, noisy.phi, epsilon = 1e-4);
    assert_abs_diff_eq!(quiet.xi, noisy.xi, epsilon = 1e-4);
}

#[test]
fn scan_step_shrinks_above_reference() {
    let template = ScanTemplate {
        kappa: 1.0,
        fhat: HermitianMatrix::pauli_z().scaled(0.5),
        hq: HermitianMatrix::zeros(2),
        rho_q: QuantumDensity::pure(&[c(1.0), c(1.0)]).matrix().clone(),
        units: Units::default(),
        dc: 1.0,
        dq: 0.25,
        phi_width: 1.0,
        grid_sigmas: 8.0,
        points: 32,
        dt_ref: 0.01,
        c_ref: 2.0,
        t_final: 1.0,
        records_per_period: 8,
        scheme: Scheme::Spectral,
    };
    let (_, dt1, _) = scan_setup(&template, 1.0).unwrap();
    let (g4, dt4, _) = scan_setup(&template, 4.0).unwrap();
    assert_eq!(dt1, 0.01);
    assert_relative_eq!(dt4, 0.005, max_relative = 1e-14);
    assert!(g4.axes()[0].max > 8.0);
}
