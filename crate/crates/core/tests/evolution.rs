use approx::assert_abs_diff_eq;
use hybridyn::evolution::*;
use hybridyn::gravity_kernel::fourier_mode_product;
use hybridyn::hybrid_state::*;
use hybridyn::linalg::{block_commutator_acc, c, HermitianMatrix, C64};
use hybridyn::Units;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn grid(half: f64, n: usize) -> PhaseGrid {
    PhaseGrid::new(Axis::centered(half, n).unwrap(), Axis::centered(half, n).unwrap()).unwrap()
}

fn plus() -> QuantumDensity {
    QuantumDensity::pure(&[c(1.0), c(1.0)])
}

fn gaussian_product(g: &PhaseGrid, q: &QuantumDensity, mean: [f64; 2], s: f64) -> HybridDensity {
    product_state(q, &ClassicalDensity::gaussian(g, &mean, &[s, s]).unwrap()).unwrap()
}

fn oscillator(g: &PhaseGrid) -> ScalarField {
    g.sample(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
}

fn max_abs_diff(a: &MatrixField, b: &MatrixField) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn no_hamiltonian_no_dirac_term() {
    let g = grid(5.0, 16);
    let h = HybridHamiltonian::classical(ScalarField::zeros(&g), 2);
    let rho = gaussian_product(&g, &plus(), [0.0, 0.0], 1.0);
    let d = dirac_term(&h, &rho, &Units::default()).unwrap();
    assert_eq!(d.max_abs(), 0.0);
}

#[test]
fn dirac_term_is_traceless_pointwise() {
    let g = grid(5.0, 16);
    let h = HybridHamiltonian::new(
        HermitianMatrix::pauli_x().scaled(0.8),
        ScalarField::zeros(&g),
        vec![Coupling { op: HermitianMatrix::pauli_z(), field: ScalarField::coordinate(&g, 0) }],
    )
    .unwrap();
    let rho = gaussian_product(&g, &plus(), [0.5, 0.0], 1.0);
    let d = dirac_term(&h, &rho, &Units::default()).unwrap();
    for t in d.pointwise_trace() {
        assert!(t.abs() < 1e-15);
    }
}

#[test]
fn qubit_precesses_at_splitting() {
    // HQ = (w/2) sigma_z: rho_01(t) = rho_01(0) exp(-i w t).
    let g = grid(9.0, 24);
    let w = 1.7;
    let h = HybridHamiltonian::new(HermitianMatrix::pauli_z().scaled(0.5 * w), ScalarField::zeros(&g), vec![]).unwrap();
    let rho = gaussian_product(&g, &plus(), [0.0, 0.0], 1.0);
    let p = IntegratorParams::new(0.01, 2.0, 50).unwrap();
    let ev = evolve(&h, &rho, &NoiseModel::zero(0), &Units::default(), &p).unwrap();
    for (t, s) in ev.times.iter().zip(&ev.states) {
        let q = quantum_marginal(s);
        let want = C64::from_polar(0.5, -w * t);
        assert!((q.matrix().matrix()[(0, 1)] - want).norm() < 1e-7, "t = {t}");
    }
}

#[test]
fn canonical_bracket_is_one_inside() {
    let g = grid(4.0, 20);
    let q = ScalarField::coordinate(&g, 0);
    let p = ScalarField::coordinate(&g, 1);
    let b = poisson_bracket(Operand::Scalar(&q), Operand::Scalar(&p)).unwrap().into_scalar().unwrap();
    for v in b.values() {
        assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
    }
    let a = g.sample(|x| (x[0] * x[1]).sin());
    let aa = poisson_bracket(Operand::Scalar(&a), Operand::Scalar(&a)).unwrap().into_scalar().unwrap();
    assert!(aa.max_abs() < 1e-14);
}

/// Interior max error of `{H, rho}` for the oscillator against
/// `q d_p rho - p d_q rho` evaluated analytically.
fn rotation_generator_error(n: usize) -> f64 {
    let g = grid(6.0, n);
    let s = 1.0;
    let rho = g.sample(|x| (-(x[0] - 0.7).powi(2) / (2.0 * s * s) - x[1] * x[1] / (2.0 * s * s)).exp());
    let exact = g.sample(|x| {
        let e = (-(x[0] - 0.7).powi(2) / (2.0 * s * s) - x[1] * x[1] / (2.0 * s * s)).exp();
        let dq = -(x[0] - 0.7) / (s * s) * e;
        let dp = -x[1] / (s * s) * e;
        // {H, rho} = dH/dq drho/dp - dH/dp drho/dq
        x[0] * dp - x[1] * dq
    });
    let got = poisson_bracket(Operand::Scalar(&oscillator(&g)), Operand::Scalar(&rho)).unwrap().into_scalar().unwrap();
    (0..g.len())
        .filter(|&k| !g.near_boundary(k, 2))
        .map(|k| (got.values()[k] - exact.values()[k]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn oscillator_bracket_converges_second_order() {
    let coarse = rotation_generator_error(48);
    let fine = rotation_generator_error(96);
    let ratio = coarse / fine;
    assert!(ratio > 3.5 && ratio < 4.6, "ratio {ratio}");
}

#[test]
fn entangling_flow_preserves_trace() {
    let g = grid(6.0, 32);
    let h = HybridHamiltonian::new(
        HermitianMatrix::zeros(2),
        oscillator(&g),
        vec![Coupling { op: HermitianMatrix::pauli_z(), field: ScalarField::coordinate(&g, 0) }],
    )
    .unwrap();
    let rho = gaussian_product(&g, &plus(), [0.0, 0.0], 1.0);
    let rhs = aleksandrov_rhs(&h, &rho, &Units::default()).unwrap();
    let dt = 0.01;
    assert!((rhs.total_trace() * dt).abs() < 1e-10);
}

#[test]
fn zero_noise_master_equals_aleksandrov() {
    let g = grid(6.0, 24);
    let h = HybridHamiltonian::new(
        HermitianMatrix::pauli_x().scaled(0.5),
        oscillator(&g),
        vec![Coupling { op: HermitianMatrix::pauli_z(), field: ScalarField::coordinate(&g, 0) }],
    )
    .unwrap();
    let rho = gaussian_product(&g, &plus(), [0.3, -0.2], 1.0);
    let u = Units::default();
    let a = aleksandrov_rhs(&h, &rho, &u).unwrap();
    let m = hybrid_master_rhs(&h, &rho, &NoiseModel::zero(1), &u).unwrap();
    assert_eq!(max_abs_diff(&a, &m), 0.0);
}

#[test]
fn field_noise_adds_double_commutator() {
    let g = grid(6.0, 24);
    let u = Units::new(0.8, 1.0, 1.0).unwrap();
    let gamma = 0.35;
    let sz = HermitianMatrix::pauli_z();
    let h = HybridHamiltonian::new(
        HermitianMatrix::zeros(2),
        oscillator(&g),
        vec![Coupling { op: sz.clone(), field: ScalarField::coordinate(&g, 0) }],
    )
    .unwrap();
    let rho = gaussian_product(&g, &plus(), [0.0, 0.0], 1.0);
    let a = aleksandrov_rhs(&h, &rho, &u).unwrap();
    let m = hybrid_master_rhs(&h, &rho, &NoiseModel::scalar(gamma, 0.0).unwrap(), &u).unwrap();
    // -(gamma / 2 hbar^2) [sz, [sz, rho]] assembled from block commutators.
    let s = sz.to_block();
    let mut want = a.clone();
    for k in 0..g.len() {
        let mut inner = vec![c(0.0); 4];
        block_commutator_acc(&s, rho.field().block(k), c(1.0), &mut inner, 2);
        let mut outer = vec![c(0.0); 4];
        block_commutator_acc(&s, &inner, c(1.0), &mut outer, 2);
        for (w, o) in want.block_mut(k).iter_mut().zip(&outer) {
            *w += o * (-gamma / (2.0 * u.hbar * u.hbar));
        }
    }
    assert!(max_abs_diff(&m, &want) < 1e-14);
}

#[test]
fn operator_noise_diffuses_momentum_linearly() {
    let g = grid(10.0, 60);
    let gamma = 0.4;
    let h = HybridHamiltonian::new(
        HermitianMatrix::zeros(1),
        ScalarField::zeros(&g),
        vec![Coupling { op: HermitianMatrix::zeros(1), field: ScalarField::coordinate(&g, 0) }],
    )
    .unwrap();
    let one = QuantumDensity::new(HermitianMatrix::identity(1)).unwrap();
    let rho = gaussian_product(&g, &one, [0.0, 0.0], 1.0);
    let p = IntegratorParams::new(0.005, 1.0, 50).unwrap();
    let ev = evolve(&h, &rho, &NoiseModel::scalar(0.0, gamma).unwrap(), &Units::default(), &p).unwrap();
    let v0 = classical_density(&ev.states[0]).unwrap().variance(1);
    for (t, s) in ev.times.iter().zip(&ev.states).skip(1) {
        let v = classical_density(s).unwrap().variance(1);
        assert!(((v - v0) / t - gamma).abs() < 1e-3 * gamma, "slope {} at t = {t}", (v - v0) / t);
        assert_abs_diff_eq!(classical_density(s).unwrap().variance(0), v0, epsilon = 1e-12);
    }
}

#[test]
fn threshold_examples() {
    let u = Units::new(1.3, 1.0, 1.0).unwrap();
    let at = positivity_condition_check(&NoiseModel::scalar(u.hbar / 2.0, u.hbar / 2.0).unwrap(), &u);
    assert!(at.holds);
    assert!(at.margin.abs() < 1e-15);
    let quarter = u.hbar * u.hbar / 16.0;
    assert!(!positivity_condition_check(&NoiseModel::scalar(1.0, quarter).unwrap(), &u).holds);
}

#[test]
fn fourier_diagonal_gravity_kernels_saturate_every_mode() {
    let u = Units::default();
    let ks = [[0.3, 0.0, 0.0], [0.0, 1.1, 0.4], [2.0, -1.0, 0.5], [0.05, 0.05, 0.05]];
    // DC(k) = G hbar 2 pi / k^2 is one factor; the other follows from the product.
    let dc: Vec<f64> = ks.iter().map(|k| 2.0 * std::f64::consts::PI / k.iter().map(|x| x * x).sum::<f64>()).collect();
    let dq: Vec<f64> = ks.iter().zip(&dc).map(|(k, d)| fourier_mode_product(*k, &u).unwrap() / d).collect();
    let noise = NoiseModel::new(
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(dc)),
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(dq)),
    )
    .unwrap();
    let r = positivity_condition_check(&noise, &u);
    assert!(r.holds);
    assert!(r.margin.abs() < 1e-12);
}

#[test]
fn free_oscillator_rotates_gaussian() {
    let g = grid(10.0, 64);
    let h = HybridHamiltonian::new(HermitianMatrix::zeros(2), oscillator(&g), vec![]).unwrap();
    let q0 = 1.5;
    let rho = gaussian_product(&g, &plus(), [q0, 0.0], 0.8);
    let quarter = std::f64::consts::FRAC_PI_2;
    let p = IntegratorParams::new(quarter / 200.0, quarter, 200).unwrap().with_scheme(Scheme::Spectral);
    let ev = evolve(&h, &rho, &NoiseModel::zero(0), &Units::default(), &p).unwrap();
    let last = classical_marginal(ev.last());
    let mean = |axis: usize| {
        let x = ScalarField::coordinate(&g, axis);
        x.values().iter().zip(last.values()).map(|(a, b)| a * b).sum::<f64>() * g.cell_volume()
    };
    // Hamilton's equations: (q, p) -> (0, -q0) after a quarter turn.
    assert_abs_diff_eq!(mean(0), 0.0, epsilon = 1e-6);
    assert_abs_diff_eq!(mean(1), -q0, epsilon = 1e-6);
    assert!((classical_marginal(ev.last()).integral() - 1.0).abs() < 1e-8);
    let q = quantum_marginal(ev.last());
    assert!((q.matrix().matrix() - plus().matrix().matrix()).iter().all(|z| z.norm() < 1e-10));
}

#[test]
fn noiseless_trajectories_match_deterministic_flow() {
    let g = grid(10.0, 40);
    let h = HybridHamiltonian::new(
        HermitianMatrix::pauli_x().scaled(0.5),
        oscillator(&g),
        vec![Coupling { op: HermitianMatrix::pauli_z().scaled(0.5), field: ScalarField::coordinate(&g, 0) }],
    )
    .unwrap();
    let rho = gaussian_product(&g, &plus(), [0.0, 0.0], 1.0);
    let u = Units::default();
    let p = IntegratorParams::new(0.02, 0.4, 5).unwrap();
    let det = evolve(&h, &rho, &NoiseModel::zero(1), &u, &p).unwrap();
    let ens = unravel_ensemble(&h, &rho, &NoiseModel::zero(1), &u, &p, &TrajectoryEnsemble { n_traj: 8, seed: Some(3) })
        .unwrap();
    for (a, b) in det.states.iter().zip(&ens.states) {
        assert!(max_abs_diff(a.field(), b.field()) < 1e-14);
    }
}

#[test]
fn ensembles_replay_from_seed() {
    let g = grid(11.0, 36);
    let h = HybridHamiltonian::new(
        HermitianMatrix::zeros(2),
        oscillator(&g),
        vec![Coupling { op: HermitianMatrix::pauli_z(), field: ScalarField::coordinate(&g, 0).map(|v| 0.5 * v) }],
    )
    .unwrap();
    let rho = gaussian_product(&g, &plus(), [0.0, 0.0], 1.2);
    let u = Units::default();
    let p = IntegratorParams::new(0.05, 0.3, 2).unwrap();
    let noise = NoiseModel::saturated(0.5, &u).unwrap();
    let run = |seed| unravel_ensemble(&h, &rho, &noise, &u, &p, &TrajectoryEnsemble { n_traj: 40, seed: Some(seed) }).unwrap();
    let (a, b, other) = (run(11), run(11), run(12));
    assert_eq!(a.last().field().data(), b.last().field().data());
    assert_ne!(a.last().field().data(), other.last().field().data());
    let missing = unravel_ensemble(&h, &rho, &noise, &u, &p, &TrajectoryEnsemble { n_traj: 4, seed: None });
    assert!(missing.is_err());
}

fn coupled_run(mu: f64, w: f64, dc: f64, dq: f64) -> Evolution {
    let g = grid(8.0, 32);
    let h = HybridHamiltonian::new(
        HermitianMatrix::pauli_x().scaled(0.5 * w),
        oscillator(&g),
        vec![Coupling { op: HermitianMatrix::pauli_z().scaled(mu), field: ScalarField::coordinate(&g, 0) }],
    )
    .unwrap();
    let rho = gaussian_product(&g, &plus(), [0.2, 0.0], 1.0);
    let mut p = IntegratorParams::new(0.01, 0.3, 10).unwrap();
    p.monitors.boundary = false;
    evolve(&h, &rho, &NoiseModel::scalar(dc, dq).unwrap(), &Units::default(), &p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn evolution_conserves_trace_and_hermiticity(mu in 0.0..0.6, w in 0.0..1.5, dc in 0.0..0.8, dq in 0.0..0.8) {
        let ev = coupled_run(mu, w, dc, dq);
        prop_assert!(ev.log.max_trace_error() < 1e-6);
        prop_assert!(ev.max_hermiticity_residual < 1e-10);
    }

    #[test]
    fn uncoupled_flow_factorizes(w in 0.1..2.0, q0 in -1.0..1.0) {
        let g = grid(10.0, 40);
        let hc = oscillator(&g);
        let hq = HermitianMatrix::pauli_x().scaled(0.5 * w);
        let h = HybridHamiltonian::new(hq.clone(), hc.clone(), vec![]).unwrap();
        let rho = gaussian_product(&g, &QuantumDensity::new(HermitianMatrix::diagonal(&[1.0, 0.0])).unwrap(), [q0, 0.0], 1.0);
        let p = IntegratorParams::new(0.01, 0.5, 50).unwrap();
        let u = Units::default();
        let joint = evolve(&h, &rho, &NoiseModel::zero(0), &u, &p).unwrap();
        let classical_only = HybridHamiltonian::new(HermitianMatrix::zeros(1), hc, vec![]).unwrap();
        let rc = gaussian_product(&g, &QuantumDensity::new(HermitianMatrix::identity(1)).unwrap(), [q0, 0.0], 1.0);
        let c_run = evolve(&classical_only, &rc, &NoiseModel::zero(0), &u, &p).unwrap();
        let rot = hq.unitary_exp(0.5);
        let rq = &rot * HermitianMatrix::diagonal(&[1.0, 0.0]).matrix() * rot.adjoint();
        let cl = classical_marginal(c_run.last());
        let mut err: f64 = 0.0;
        for k in 0..g.len() {
            let want = &rq * c(cl.values()[k]);
            err = err.max((joint.last().field().matrix_at(k) - want).iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        prop_assert!(err < 1e-9, "factorization error {}", err);
    }

    #[test]
    fn bracket_is_antisymmetric_and_leibniz(a1 in -1.0..1.0, a2 in -1.0..1.0, b1 in -1.0..1.0, b2 in -1.0..1.0) {
        let g = grid(3.0, 40);
        let a = g.sample(|x| a1 * x[0] * x[0] + a2 * x[0] * x[1]);
        let b = g.sample(|x| b1 * x[1] + b2 * x[0] * x[1] * x[1]);
        let cf = g.sample(|x| 1.0 + 0.2 * x[0]);
        let pb = |x: &ScalarField, y: &ScalarField| poisson_bracket(Operand::Scalar(x), Operand::Scalar(y)).unwrap().into_scalar().unwrap();
        let ab = pb(&a, &b);
        let ba = pb(&b, &a);
        prop_assert!(ab.values().iter().zip(ba.values()).all(|(x, y)| (x + y).abs() < 1e-12));
        // {a, b c} = {a, b} c + b {a, c}, compared away from the edges.
        let bc = ScalarField::new(g.clone(), b.values().iter().zip(cf.values()).map(|(x, y)| x * y).collect()).unwrap();
        let lhs = pb(&a, &bc);
        let ac = pb(&a, &cf);
        let h = g.axes()[0].spacing();
        for k in (0..g.len()).filter(|&k| !g.near_boundary(k, 2)) {
            let rhs = ab.values()[k] * cf.values()[k] + b.values()[k] * ac.values()[k];
            prop_assert!((lhs.values()[k] - rhs).abs() < 40.0 * h * h, "Leibniz defect {}", lhs.values()[k] - rhs);
        }
    }
}
