use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{GeometryCouplings, HyperfineTensor, Nucleus, Radical, RateModel, SpinSystem};
use crate::spin::SpinMultiplicity;

fn one_nucleus(gamma: f64) -> RadicalPairModel {
    let system = SpinSystem::new(vec![Nucleus {
        name: "N".into(),
        multiplicity: SpinMultiplicity::ONE,
        tensor: HyperfineTensor::from_mt([-0.1, 0.0, 0.0, 0.0, -0.1, 0.0, 0.0, 0.0, 1.2]).unwrap(),
        radical: Radical::One,
    }]);
    RadicalPairModel::new(
        system,
        GeometryCouplings::standard().with_j0_mhz(5.0),
        RateModel::new(1.0, 1.0).unwrap(),
        gamma,
        50.0,
    )
    .unwrap()
}

fn problem(model: RadicalPairModel, segments: usize, segment_us: f64, lambda: f64) -> ControlProblem {
    let f_max = model.field(0.0, 0.0).unwrap();
    let f_min = model.field(std::f64::consts::FRAC_PI_2, 0.0).unwrap();
    ControlProblem::new(model, f_max, f_min, segments, segment_us, 3.0, lambda).unwrap()
}

fn random_u(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..m).map(|_| rng.gen_range(0.2..2.8)).collect()
}

fn check_gradient(p: &ControlProblem, seed: u64, coords: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_u(p.segments(), &mut rng);
    let (eval, grad) = p.gradient(&u).unwrap();
    assert!((eval.objective - p.objective(&u).unwrap()).abs() < 1e-11);
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let eps = 1e-4;
    for _ in 0..coords {
        let j = rng.gen_range(0..u.len());
        let mut up = u.clone();
        let mut down = u.clone();
        up[j] += eps;
        down[j] -= eps;
        let fd = (p.objective(&up).unwrap() - p.objective(&down).unwrap()) / (2.0 * eps);
        let err = (fd - grad[j]).abs();
        assert!(
            err <= 1e-4 * fd.abs().max(1e-3 * scale),
            "seed {seed} coord {j}: adjoint {} vs fd {fd}",
            grad[j]
        );
    }
}

#[test]
fn adjoint_matches_finite_differences() {
    let p = problem(one_nucleus(0.0), 8, 0.05, 1e-3);
    for seed in 0..3 {
        check_gradient(&p, seed, 6);
    }
}

#[test]
fn adjoint_matches_finite_differences_with_relaxation() {
    let p = problem(one_nucleus(1.0), 6, 0.05, 0.0);
    check_gradient(&p, 11, 6);
}

#[test]
fn zero_control_reduces_to_static_contrast() {
    let p = problem(one_nucleus(0.0), 10, 0.001, 0.0);
    // Same step and the same fixed horizon as the control propagations.
    let cfg = IntegratorConfig {
        dt: Some(p.dt()),
        full_horizon: true,
        ..IntegratorConfig::default().without_series()
    };
    let (f_max, f_min) = p.fields();
    let run = |f: &FieldSpec| {
        propagate(p.model(), f, &ModulationSpec::Static, &cfg)
            .unwrap()
            .singlet_yield
    };
    let e = p.evaluate(&vec![0.0; 10]).unwrap();
    assert!((e.objective - (run(&f_max) - run(&f_min))).abs() < 1e-10);
}

#[test]
fn identical_orientations_leave_only_the_penalty() {
    let model = one_nucleus(0.0);
    let f = model.field(0.5, 0.2).unwrap();
    let p = ControlProblem::new(model, f, f, 5, 0.01, 3.0, 0.1).unwrap();
    let u = [0.0, 1.0, 3.0, 2.0, 2.0];
    let e = p.evaluate(&u).unwrap();
    assert!((e.contrast()).abs() < 1e-15);
    assert!((e.objective + 0.1 * (1.0 + 4.0 + 1.0)).abs() < 1e-12);
}

#[test]
fn penalty_dominates_when_yields_are_isotropic() {
    // No nuclei, exchange only: yields do not depend on the field direction.
    let model = RadicalPairModel::new(
        SpinSystem::bare(),
        GeometryCouplings::standard().with_flags(false, true).with_j0_mhz(10.0),
        RateModel::new(1.0, 1.0).unwrap(),
        0.0,
        50.0,
    )
    .unwrap();
    let p = problem(model, 6, 0.01, 0.5);
    let u = [0.5, 1.5, 0.5, 2.0, 2.5, 1.0];
    let (_, g) = p.gradient(&u).unwrap();
    for j in 1..5 {
        let lap = u[j + 1] - 2.0 * u[j] + u[j - 1];
        assert!((g[j] - 2.0 * 0.5 * lap).abs() < 1e-10, "{j}: {}", g[j]);
    }
}

#[test]
fn decoupled_controls_have_zero_yield_gradient() {
    // With both couplings off, only the recombination rate depends on the
    // distance; remove that too and the displacements act on nothing.
    let mut model = one_nucleus(0.0);
    model.geometry = GeometryCouplings::standard().with_flags(false, false);
    model.rates = RateModel::new(1.0, 0.0).unwrap();
    let p = problem(model.clone(), 4, 0.01, 0.0);
    let (e, g) = p.gradient(&[0.0, 1.0, 2.0, 3.0]).unwrap();
    assert_eq!(e.phi_max, 0.0);
    assert!(g.iter().all(|x| x.abs() < 1e-14), "{g:?}");
    // Rate dependence alone: a larger separation slows recombination.
    model.rates = RateModel::new(1.0, 1.0).unwrap();
    let p = problem(model, 4, 0.01, 0.0);
    let e0 = p.evaluate(&[0.0; 4]).unwrap();
    let e1 = p.evaluate(&[1.0; 4]).unwrap();
    assert!(e1.phi_max < e0.phi_max && e1.phi_min < e0.phi_min);
}

#[test]
fn harmonic_shape_reproduces_driven_yields() {
    // Short-lived pair so that 1 ns segments cover the whole yield horizon.
    let mut model = one_nucleus(0.0);
    model.rates = RateModel::new(5.0, 5.0).unwrap();
    let horizon = 15.0 / 5.0;
    let segments = (horizon / 0.001f64).round() as usize;
    let p = problem(model.clone(), segments, 0.001, 0.0);
    let nu = 2.0;
    let e = p.evaluate(&p.harmonic_warm_start(nu)).unwrap();
    let drive = ModulationSpec::harmonic(nu, 3.0).unwrap();
    let (f_max, f_min) = p.fields();
    let cfg = IntegratorConfig::default().without_series();
    let phi = |f: &FieldSpec| propagate(&model, f, &drive, &cfg).unwrap().singlet_yield;
    let driven = phi(&f_max) - phi(&f_min);
    assert!((e.contrast() - driven).abs() < 1e-4, "{} vs {driven}", e.contrast());
}

struct Quadratic {
    center: Vec<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn upper_bound(&self) -> f64 {
        3.0
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(-x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>())
    }
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = x.iter().zip(&self.center).map(|(a, c)| -2.0 * (a - c)).collect();
        Ok((self.value(x)?, g))
    }
}

#[test]
fn quadratic_converges_in_few_iterations() {
    let q = Quadratic {
        center: vec![1.0, 2.0, 0.5, 2.5],
    };
    let t = maximize(&q, &[0.0; 4], &OptimizerSettings::default()).unwrap();
    assert!(t.converged && !t.stagnated);
    assert!(t.iterations <= 3, "{}", t.iterations);
    assert!(t.x.iter().zip(&q.center).all(|(a, c)| (a - c).abs() < 1e-9));
    // Starting at the optimum: no ascent direction.
    let t = maximize(&q, &q.center, &OptimizerSettings::default()).unwrap();
    assert!(t.stagnated && t.iterations == 0);
}

#[test]
fn bounds_are_enforced() {
    // Unconstrained optimum outside the box.
    let q = Quadratic {
        center: vec![-1.0, 5.0],
    };
    let t = maximize(&q, &[1.0, 1.0], &OptimizerSettings::default()).unwrap();
    assert_eq!(t.x, vec![0.0, 3.0]);
    assert!(t.history.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn optimizer_improves_small_problem_monotonically() {
    let p = problem(one_nucleus(0.0), 4, 0.1, 1e-3);
    let settings = OptimizerSettings {
        max_iters: 15,
        ..OptimizerSettings::default()
    };
    let res = optimize(&p, &[0.0; 4], &settings).unwrap();
    assert!(res.history.windows(2).all(|w| w[1] >= w[0]), "{:?}", res.history);
    assert!(res.displacements.iter().all(|u| (0.0..=3.0).contains(u)));
    assert!(res.last.objective > res.initial.objective);
    assert_eq!(res.history.len(), res.iterations + 1);
}

#[test]
fn single_segment_is_a_line_search() {
    let p = problem(one_nucleus(0.0), 1, 0.5, 0.0);
    let res = optimize(&p, &[1.5], &OptimizerSettings::default()).unwrap();
    assert!((0.0..=3.0).contains(&res.displacements[0]));
    assert!(res.last.objective >= res.initial.objective);
}

#[test]
fn warm_start_is_never_worse_than_cold_start() {
    let p = problem(one_nucleus(0.0), 20, 0.05, 1e-3);
    let cold = p.evaluate(&vec![0.0; 20]).unwrap();
    let warm = p.warm_start(&[1.0, 3.0, 10.0]).unwrap();
    assert!(warm.evaluation.objective >= cold.objective);
}

#[test]
fn sequence_round_trip() {
    let u = vec![0.0, 1.25, 3.0];
    let mut buf = Vec::new();
    write_sequence(&mut buf, &u, 0.001).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("index,t_start_us,u_A\n0,"));
    let (back, dt) = read_sequence(&buf[..]).unwrap();
    assert_eq!(back, u);
    assert!((dt.unwrap() - 0.001).abs() < 1e-15);
    assert!(read_sequence(&b"index,t_start_us,u_A\n1,0,0\n"[..]).is_err());
    assert!(read_sequence(&b"bad\n"[..]).is_err());
}

#[test]
fn invalid_problems_are_rejected() {
    let model = one_nucleus(0.0);
    let f = model.field(0.0, 0.0).unwrap();
    assert!(ControlProblem::new(model.clone(), f, f, 0, 0.001, 3.0, 0.0).is_err());
    assert!(ControlProblem::new(model.clone(), f, f, 3, 0.0, 3.0, 0.0).is_err());
    assert!(ControlProblem::new(model.clone(), f, f, 3, 0.001, -1.0, 0.0).is_err());
    assert!(ControlProblem::new(model.clone(), f, f, 3, 0.001, 3.0, -1.0).is_err());
    let p = ControlProblem::new(model, f, f, 3, 0.001, 3.0, 0.0).unwrap();
    assert!(p.evaluate(&[0.0, 4.0, 0.0]).is_err());
    assert!(p.gradient(&[0.0, 1.0]).is_err());
}
