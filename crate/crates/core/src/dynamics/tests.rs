use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::*;
use crate::model::{
    build_interaction_hamiltonian, build_static_hamiltonian, effective_hamiltonian, GeometryCouplings,
    HyperfineTensor, Nucleus, Radical, RateModel, SpinSystem,
};
use crate::spin::SpinMultiplicity;

fn bare_model(kf: f64, kb: f64) -> RadicalPairModel {
    RadicalPairModel::new(
        SpinSystem::bare(),
        GeometryCouplings::standard().with_flags(false, false),
        RateModel::new(kf, kb).unwrap(),
        0.0,
        0.0,
    )
    .unwrap()
}

fn one_nucleus_system(a_mt: f64) -> SpinSystem {
    SpinSystem::new(vec![Nucleus {
        name: "H".into(),
        multiplicity: SpinMultiplicity::HALF,
        tensor: HyperfineTensor::isotropic_mt(a_mt).unwrap(),
        radical: Radical::One,
    }])
}

/// Axial spin-1 nucleus in the flavin-like range.
fn axial_system() -> SpinSystem {
    SpinSystem::new(vec![Nucleus {
        name: "N".into(),
        multiplicity: SpinMultiplicity::ONE,
        tensor: HyperfineTensor::from_mt([-0.1, 0.0, 0.0, 0.0, -0.1, 0.0, 0.0, 0.0, 1.2]).unwrap(),
        radical: Radical::One,
    }])
}

fn field0() -> FieldSpec {
    FieldSpec::new(0.0, 0.0, 0.0).unwrap()
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn degenerate_model_is_analytic() {
    let model = bare_model(1.0, 1.0);
    let res = propagate(&model, &field0(), &ModulationSpec::Static, &IntegratorConfig::default()).unwrap();
    assert!((res.singlet_yield - 0.5).abs() < 1e-6, "{}", res.singlet_yield);
    for (i, &t) in res.times.iter().enumerate().step_by(97) {
        let want = (-2.0 * t).exp();
        assert!((res.trace[i] - want).abs() < 1e-12);
        assert!((res.singlet_probability[i] - want).abs() < 1e-12);
    }
    assert!(res.conservation_residual() < 1e-6);
    // σ_ss = P_S
    let sigma = res.steady_state().unwrap();
    assert!((conditional_singlet_probability(&sigma).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn exchange_does_not_move_the_singlet() {
    let base = propagate(&bare_model(1.0, 1.0), &field0(), &ModulationSpec::Static, &IntegratorConfig::default())
        .unwrap();
    for j in [-100.0, -3.0, 25.0, 100.0] {
        let mut model = bare_model(1.0, 1.0);
        model.geometry = GeometryCouplings::standard().with_flags(false, true).with_j0_mhz(j);
        let drive = ModulationSpec::harmonic(2.0, 3.0).unwrap();
        let res = propagate(&model, &field0(), &drive, &IntegratorConfig::default()).unwrap();
        // k_b varies with r under driving; compare the static run instead.
        let stat = propagate(&model, &field0(), &ModulationSpec::Static, &IntegratorConfig::default()).unwrap();
        assert!((stat.singlet_yield - base.singlet_yield).abs() < 1e-9);
        assert!(res.conserves_probability());
    }
}

#[test]
fn kb_zero_gives_zero_yield() {
    let res = propagate(&bare_model(1.0, 0.0), &field0(), &ModulationSpec::Static, &IntegratorConfig::default())
        .unwrap();
    assert_eq!(res.singlet_yield, 0.0);
}

#[test]
fn singlet_probability_matches_exact_diagonalization() {
    let sys = one_nucleus_system(0.8);
    let kf = 1e-3;
    let model = RadicalPairModel::new(
        sys.clone(),
        GeometryCouplings::standard().with_flags(false, false),
        RateModel::new(kf, 0.0).unwrap(),
        0.0,
        0.0,
    )
    .unwrap();
    let cfg = IntegratorConfig {
        t_max: Some(2.0),
        ..IntegratorConfig::default()
    };
    let res = propagate(&model, &field0(), &ModulationSpec::Static, &cfg).unwrap();

    let h = build_static_hamiltonian(&sys, &field0()).unwrap().into_matrix();
    let eig = h.symmetric_eigen();
    let ps = singlet_projector(sys.layout()).unwrap().into_matrix();
    let z = sys.nuclear_dim() as f64;
    let v = &eig.eigenvectors;
    let ps_eig = v.adjoint() * &ps * v;
    for (i, &t) in res.times.iter().enumerate().step_by(37) {
        // p_S(t) = e^{-k_f t}/Z Σ_{ab} |⟨a|P_S|b⟩|² cos((E_a − E_b)t)
        let mut p = 0.0;
        for a in 0..eig.eigenvalues.len() {
            for b in 0..eig.eigenvalues.len() {
                let w = eig.eigenvalues[a] - eig.eigenvalues[b];
                p += ps_eig[(a, b)].norm_sqr() * (w * t).cos();
            }
        }
        p *= (-kf * t).exp() / z;
        assert!((res.singlet_probability[i] - p).abs() < 1e-8, "t={t}: {} vs {p}", res.singlet_probability[i]);
    }
}

/// vec(A X B) = (Bᵀ ⊗ A) vec(X), column stacking.
fn superop_left(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    DMatrix::identity(a.nrows(), a.nrows()).kronecker(a)
}

fn superop_right(b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    b.transpose().kronecker(&DMatrix::identity(b.nrows(), b.nrows()))
}

/// Full Liouvillian of the model at fixed r, as a d²×d² matrix.
fn liouvillian(model: &RadicalPairModel, field: &FieldSpec, r: f64) -> DMatrix<Complex64> {
    let sys = &model.system;
    let h = build_static_hamiltonian(sys, field).unwrap().into_matrix()
        + build_interaction_hamiltonian(sys, &model.geometry, r).unwrap().into_matrix();
    let kb = crate::model::recombination_rate(model.rates.kb0, model.geometry.beta, r, model.geometry.r0).unwrap();
    let layout = sys.layout();
    let heff = effective_hamiltonian(
        &crate::spin::Operator::new(h, layout.clone()).unwrap(),
        kb,
        model.rates.kf,
    )
    .unwrap()
    .into_matrix();
    let i = Complex64::i();
    let mut l = superop_left(&heff) * (-i) + superop_right(&heff.adjoint()) * i;
    if model.relaxation > 0.0 {
        let (s1, s2) = crate::spin::electron_spins(layout).unwrap();
        for s in s1.components().into_iter().chain(s2.components()) {
            let m = s.matrix();
            let sq = m * m;
            l += (superop_left(m) * superop_right(m) - (superop_left(&sq) + superop_right(&sq)) * Complex64::from(0.5))
                * Complex64::from(model.relaxation);
        }
    }
    l
}

fn vec_of(m: &DMatrix<Complex64>) -> nalgebra::DVector<Complex64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &nalgebra::DVector<Complex64>, d: usize) -> DMatrix<Complex64> {
    DMatrix::from_column_slice(d, d, v.as_slice())
}

#[test]
fn relaxation_matches_liouville_exponential() {
    let mut model = bare_model(1.0, 0.0);
    model.relaxation = 1.3;
    let cfg = IntegratorConfig {
        t_max: Some(3.0),
        ..IntegratorConfig::default()
    };
    let res = propagate(&model, &field0(), &ModulationSpec::Static, &cfg).unwrap();
    let l = liouvillian(&model, &field0(), model.geometry.r0);
    let ps = singlet_projector(model.system.layout()).unwrap().into_matrix();
    let rho0 = vec_of(&ps);
    for (i, &t) in res.times.iter().enumerate().step_by(250) {
        let rho = unvec(&((&l * Complex64::from(t)).exp() * &rho0), 4);
        let want = (&ps * rho).trace().re;
        assert!((res.singlet_probability[i] - want).abs() < 1e-8, "t={t}");
    }
}

#[test]
fn split_relaxation_tracks_exact_liouvillian_with_hamiltonian() {
    let mut model = RadicalPairModel::new(
        one_nucleus_system(0.5),
        GeometryCouplings::standard().with_j0_mhz(5.0),
        RateModel::new(1.0, 1.0).unwrap(),
        1.0,
        50.0,
    )
    .unwrap();
    model.relaxation = 1.0;
    let field = FieldSpec::new(50.0, 0.7, 0.2).unwrap();
    let res = propagate(&model, &field, &ModulationSpec::Static, &IntegratorConfig::default()).unwrap();
    let l = liouvillian(&model, &field, model.geometry.r0);
    let d = model.system.dim();
    let rho0 = vec_of(&(singlet_projector(model.system.layout()).unwrap().into_matrix() / Complex64::from(2.0)));
    let r_exact = unvec(&l.lu().solve(&(-rho0)).unwrap(), d);
    let diff = max_abs(&(&res.integrated_state - &r_exact));
    assert!(diff < 1e-5 * max_abs(&r_exact), "integrated state differs by {diff}");
    assert!(res.conservation_residual() < 1e-6);
}

#[test]
fn steady_state_matches_resolvent() {
    let model = RadicalPairModel::new(
        axial_system(),
        GeometryCouplings::standard().with_j0_mhz(-2.0),
        RateModel::new(1.0, 1.0).unwrap(),
        0.0,
        50.0,
    )
    .unwrap();
    for theta in [0.0, 0.9, PI / 2.0] {
        let field = FieldSpec::new(50.0, theta, 0.3).unwrap();
        let res = propagate(&model, &field, &ModulationSpec::Static, &IntegratorConfig::default()).unwrap();
        let sigma = res.steady_state().unwrap();
        let d = model.system.dim();
        let l = liouvillian(&model, &field, model.geometry.r0);
        let ps = singlet_projector(model.system.layout()).unwrap().into_matrix();
        let r = unvec(&l.lu().solve(&(-vec_of(&ps))).unwrap(), d);
        let want = &r / Complex64::from(r.trace().re);
        let err = max_abs(&(sigma.matrix() - &want));
        assert!(err < 1e-6, "θ={theta}: {err:e}");
        assert!((sigma.trace() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn wavefunction_batching_matches_density_path() {
    let model = RadicalPairModel::new(
        axial_system(),
        GeometryCouplings::standard().with_j0_mhz(10.0),
        RateModel::new(1.0, 1.0).unwrap(),
        0.0,
        50.0,
    )
    .unwrap();
    let field = FieldSpec::new(50.0, 1.1, 0.4).unwrap();
    let drive = ModulationSpec::harmonic(2.0, 3.0).unwrap();
    let cfg = IntegratorConfig::default();
    let batched = propagate(&model, &field, &drive, &cfg).unwrap();
    let dense = propagate(
        &model,
        &field,
        &drive,
        &IntegratorConfig {
            force_density: true,
            ..cfg
        },
    )
    .unwrap();
    assert!((batched.singlet_yield - dense.singlet_yield).abs() < 1e-8);
    for (a, b) in batched.singlet_probability.iter().zip(&dense.singlet_probability) {
        assert!((a - b).abs() < 1e-8);
    }
    assert!(max_abs(&(&batched.integrated_state - &dense.integrated_state)) < 1e-8);
}

#[test]
fn harmonic_runs_conserve_probability_and_depend_on_drive() {
    let model = RadicalPairModel::new(
        axial_system(),
        GeometryCouplings::standard().with_j0_mhz(10.0),
        RateModel::new(1.0, 1.0).unwrap(),
        0.0,
        50.0,
    )
    .unwrap();
    let field = FieldSpec::new(50.0, 0.5, 0.0).unwrap();
    let stat = propagate(&model, &field, &ModulationSpec::Static, &IntegratorConfig::default()).unwrap();
    let drive = propagate(&model, &field, &ModulationSpec::harmonic(2.0, 3.0).unwrap(), &IntegratorConfig::default())
        .unwrap();
    assert!(stat.conservation_residual() < 1e-4);
    assert!(drive.conservation_residual() < 1e-4);
    assert!((stat.singlet_yield - drive.singlet_yield).abs() > 1e-4);
    // Trace never increases.
    assert!(drive.trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
}

#[test]
fn horizon_error_without_escape() {
    let err = propagate(
        &bare_model(0.0, 1.0),
        &field0(),
        &ModulationSpec::Static,
        &IntegratorConfig {
            t_max: Some(1.0),
            ..IntegratorConfig::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Horizon { .. }), "{err}");
    // Long enough horizon converges.
    let ok = propagate(&bare_model(0.0, 1.0), &field0(), &ModulationSpec::Static, &IntegratorConfig::default()).unwrap();
    assert!((ok.singlet_yield - 1.0).abs() < 1e-6);
}

#[test]
fn step_size_violation_is_rejected() {
    let model = RadicalPairModel::new(
        axial_system(),
        GeometryCouplings::standard(),
        RateModel::new(1.0, 1.0).unwrap(),
        0.0,
        50.0,
    )
    .unwrap();
    let cfg = IntegratorConfig {
        dt: Some(0.05),
        ..IntegratorConfig::default()
    };
    let err = propagate(&model, &FieldSpec::new(50.0, 0.0, 0.0).unwrap(), &ModulationSpec::Static, &cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn trace_dump_has_header_and_rows() {
    let res = propagate(&bare_model(1.0, 1.0), &field0(), &ModulationSpec::Static, &IntegratorConfig::default())
        .unwrap();
    let mut buf = Vec::new();
    res.write_trace(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t_us,trace,p_S,r_A,kb_per_us"));
    assert_eq!(lines.count(), res.times.len());
}

#[test]
fn theta_sensitivity_of_probe() {
    let model = RadicalPairModel::new(
        axial_system(),
        GeometryCouplings::standard().with_flags(false, false),
        RateModel::new(1.0, 1.0).unwrap(),
        0.0,
        50.0,
    )
    .unwrap();
    let theta_s = |theta: f64| {
        let res = propagate(
            &model,
            &FieldSpec::new(50.0, theta, 0.0).unwrap(),
            &ModulationSpec::Static,
            &IntegratorConfig::default().without_series(),
        )
        .unwrap();
        conditional_singlet_probability(&res.steady_state().unwrap()).unwrap()
    };
    assert!((theta_s(0.0) - theta_s(PI / 2.0)).abs() > 1e-3);
}

#[test]
fn mixed_state_singlet_fraction_is_quarter() {
    let layout = one_nucleus_system(0.1).layout().clone();
    let d = layout.dim();
    let sigma = DensityOperator::new(DMatrix::identity(d, d) / Complex64::from(d as f64), layout).unwrap();
    assert!((conditional_singlet_probability(&sigma).unwrap() - 0.25).abs() < 1e-15);
    assert!(matches!(
        steady_state(&DMatrix::zeros(4, 4), bare_model(1.0, 1.0).system.layout()),
        Err(Error::DegenerateProbe(_))
    ));
}

fn fig1_style_model() -> RadicalPairModel {
    RadicalPairModel::new(
        axial_system(),
        GeometryCouplings::standard().with_j0_mhz(-2.0),
        RateModel::new(1.0, 1.0).unwrap(),
        0.0,
        50.0,
    )
    .unwrap()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn schemes_agree_once_rk4_is_resolved() {
    // RK4 truncation is ~1.5e-5 at half the default step for this hyperfine
    // strength and falls as h⁴; at an eighth of the default step it is < 1e-7.
    let model = fig1_style_model();
    let field = model.field(0.7, 0.3).unwrap();
    for drive in [ModulationSpec::Static, ModulationSpec::harmonic(2.0, 3.0).unwrap()] {
        let dt = propagate(&model, &field, &drive, &IntegratorConfig::default()).unwrap().dt;
        let mut gaps = Vec::new();
        for div in [2.0, 4.0, 8.0] {
            let cfg = IntegratorConfig {
                dt: Some(dt / div),
                ..IntegratorConfig::default()
            };
            let exp = propagate(&model, &field, &drive, &cfg).unwrap();
            let rk = propagate(&model, &field, &drive, &IntegratorConfig { scheme: Scheme::RungeKutta4, ..cfg }).unwrap();
            gaps.push(max_gap(&exp.singlet_probability, &rk.singlet_probability));
            assert!((exp.singlet_yield - rk.singlet_yield).abs() < 1e-6);
        }
        assert!(gaps[2] < 1e-6, "{gaps:?}");
        // Fourth-order convergence of the difference.
        assert!(gaps[0] / gaps[1] > 12.0 && gaps[1] / gaps[2] > 12.0, "{gaps:?}");
    }
}

#[test]
fn harmonic_yield_is_step_converged() {
    let model = fig1_style_model();
    let field = model.field(0.7, 0.3).unwrap();
    for nu in [2.0, 7.0] {
        let drive = ModulationSpec::harmonic(nu, 3.0).unwrap();
        let base = propagate(&model, &field, &drive, &IntegratorConfig::default().without_series()).unwrap();
        let half = IntegratorConfig {
            dt: Some(base.dt / 2.0),
            ..IntegratorConfig::default().without_series()
        };
        let fine = propagate(&model, &field, &drive, &half).unwrap();
        assert!((base.singlet_yield - fine.singlet_yield).abs() < 1e-6, "nu={nu}");
    }
}

#[test]
fn periodic_doubling_matches_stepping() {
    let model = fig1_style_model();
    let field = model.field(1.1, 0.4).unwrap();
    let piecewise = ModulationSpec::Piecewise(
        crate::model::PiecewiseTrajectory::new(0.001, (0..40).map(|j| 3.0 * (j as f64 * 0.3).sin().abs()).collect(), 3.0)
            .unwrap(),
    );
    for drive in [
        ModulationSpec::Static,
        ModulationSpec::harmonic(2.0, 3.0).unwrap(),
        ModulationSpec::harmonic(0.9, 3.0).unwrap(),
        piecewise,
    ] {
        // A tiny cutoff keeps the stepped run from stopping early.
        let cfg = IntegratorConfig {
            epsilon: 1e-14,
            ..IntegratorConfig::default()
        };
        let stepped = propagate(&model, &field, &drive, &cfg).unwrap();
        let fast = propagate(&model, &field, &drive, &cfg.clone().without_series()).unwrap();
        assert_eq!(fast.steps, stepped.steps);
        assert!((fast.singlet_yield - stepped.singlet_yield).abs() < 1e-11);
        assert!((fast.final_trace - stepped.final_trace).abs() < 1e-13);
        assert!(max_abs(&(&fast.integrated_state - &stepped.integrated_state)) < 1e-11);
    }
}
