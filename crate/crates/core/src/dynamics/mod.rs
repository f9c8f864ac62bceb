//! Open-system propagation of the radical pair.
//!
//! The density operator obeys
//!
//! dρ/dt = −i(H_eff ρ − ρ H_eff†) + γ D[ρ],   H_eff = H(t) − (i/2)(k_b(t) P_S + k_f I),
//!
//! starting from ρ(0) = P_S / Z. The singlet yield Φ_S = ∫ k_b(t) Tr[P_S ρ] dt
//! and the time-integrated state R = ∫ ρ dt are accumulated on the fly.
//!
//! Without relaxation the state stays a mixture of Z pure states and is
//! propagated as a d×Z block of wavefunctions. With relaxation each step is
//! split symmetrically: half a step of the (exact) non-Hermitian evolution,
//! the exact relaxation map, and another half step.

mod engine;
mod exponential;
mod rfr;
mod rk4;

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::model::{radial_trajectory, FieldSpec, IntegratorSection, ModulationSpec, RadicalPairModel};
use crate::spin::{singlet_projector, HilbertLayout};
use crate::tolerance::TOL;

pub(crate) use engine::{Engine, KeyPlan, StepGrid};
pub(crate) use exponential::{initial_density, initial_wavefunctions};
pub(crate) use rfr::relax_in_place;
pub use rfr::{rfr_dissipator, RfrDissipator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Exact exponential of the step-midpoint generator.
    #[default]
    PiecewiseExponential,
    /// Classical RK4 with the true time dependence, for cross-checks.
    RungeKutta4,
}

/// Step size, horizon and cutoff. `None` selects the defaults: dt = 1 ns
/// (0.1 ns for driving at 10 MHz or faster), reduced to resolve the fastest
/// timescale and adjusted to divide the driving period or control segment;
/// T_max = 15/k_f.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub epsilon: f64,
    pub scheme: Scheme,
    /// Keep the per-step series (trace, p_S, r, k_b).
    pub record_series: bool,
    pub(crate) force_density: bool,
    /// Run every step to T_max even after the trace falls below ε, so that
    /// the step count does not depend on the parameters (control).
    pub(crate) full_horizon: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_max: None,
            epsilon: 1e-7,
            scheme: Scheme::PiecewiseExponential,
            record_series: true,
            force_density: false,
            full_horizon: false,
        }
    }
}

impl IntegratorConfig {
    pub fn from_section(section: &IntegratorSection) -> Result<Self> {
        let mut cfg = Self {
            dt: section.dt_us,
            t_max: section.t_max_us,
            ..Self::default()
        };
        if let Some(eps) = section.epsilon {
            cfg.epsilon = eps;
        }
        cfg.scheme = match section.scheme.as_deref() {
            None | Some("exponential") => Scheme::PiecewiseExponential,
            Some("rk4") => Scheme::RungeKutta4,
            Some(other) => return Err(Error::Config(format!("unknown scheme '{other}'"))),
        };
        Ok(cfg)
    }

    pub fn without_series(mut self) -> Self {
        self.record_series = false;
        self
    }
}

/// Outcome of one propagation.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// Grid times t_n in µs (empty unless series were recorded).
    pub times: Vec<f64>,
    pub trace: Vec<f64>,
    /// Unnormalized Tr[P_S ρ(t_n)].
    pub singlet_probability: Vec<f64>,
    pub radius: Vec<f64>,
    pub recombination_rate: Vec<f64>,
    /// Φ_S.
    pub singlet_yield: f64,
    /// R = ∫ρ dt.
    pub integrated_state: DMatrix<Complex64>,
    /// ∫Tr ρ dt = Tr R.
    pub integrated_trace: f64,
    /// Tr ρ at the last step.
    pub final_trace: f64,
    pub dt: f64,
    pub steps: usize,
    pub kf: f64,
    layout: Arc<HilbertLayout>,
}

impl SimulationResult {
    /// |Φ_S + k_f ∫Tr ρ dt − 1|.
    pub fn conservation_residual(&self) -> f64 {
        (self.singlet_yield + self.kf * self.integrated_trace - 1.0).abs()
    }

    pub fn conserves_probability(&self) -> bool {
        self.conservation_residual() < TOL.conservation
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    /// Normalized probe σ_ss = R / Tr R.
    pub fn steady_state(&self) -> Result<DensityOperator> {
        steady_state(&self.integrated_state, &self.layout)
    }

    /// Columnar dump: `t_us,trace,p_S,r_A,kb_per_us`.
    pub fn write_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_us,trace,p_S,r_A,kb_per_us")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                self.times[i], self.trace[i], self.singlet_probability[i], self.radius[i], self.recombination_rate[i]
            )?;
        }
        Ok(())
    }
}

/// Per-step series collector.
pub(crate) struct Trajectory {
    record: bool,
    times: Vec<f64>,
    trace: Vec<f64>,
    p_s: Vec<f64>,
    radius: Vec<f64>,
    kb: Vec<f64>,
    steps: usize,
    final_trace: f64,
}

impl Trajectory {
    pub fn new(record: bool) -> Self {
        Self {
            record,
            times: Vec::new(),
            trace: Vec::new(),
            p_s: Vec::new(),
            radius: Vec::new(),
            kb: Vec::new(),
            steps: 0,
            final_trace: 1.0,
        }
    }

    pub fn recording(&self) -> bool {
        self.record
    }

    pub fn push(
        &mut self,
        engine: &Engine,
        modulation: &ModulationSpec,
        model: &RadicalPairModel,
        t: f64,
        rho: &CMat,
    ) -> Result<()> {
        if !self.record {
            return Ok(());
        }
        let r = radial_trajectory(modulation, &model.geometry, t)?;
        self.times.push(t);
        self.trace.push(rho.trace().re);
        self.p_s.push(engine.singlet_population(rho));
        self.radius.push(r);
        self.kb.push(engine.kb(r));
        Ok(())
    }

    pub fn finish(&mut self, steps: usize, final_trace: f64) {
        self.steps = steps;
        self.final_trace = final_trace;
    }
}

/// Propagate from ρ(0) = P_S/Z until the trace drops below ε or T_max.
pub fn propagate(
    model: &RadicalPairModel,
    field: &FieldSpec,
    modulation: &ModulationSpec,
    cfg: &IntegratorConfig,
) -> Result<SimulationResult> {
    let engine = Engine::new(model, field)?;
    propagate_with(&engine, model, modulation, cfg)
}

pub(crate) fn propagate_with(
    engine: &Engine,
    model: &RadicalPairModel,
    modulation: &ModulationSpec,
    cfg: &IntegratorConfig,
) -> Result<SimulationResult> {
    let grid = StepGrid::resolve(model, modulation, cfg)?;
    let mut traj = Trajectory::new(cfg.record_series);
    let integrals = match grid.scheme {
        Scheme::PiecewiseExponential => {
            exponential::run(engine, model, modulation, &grid, &mut traj, cfg.force_density)?
        }
        Scheme::RungeKutta4 => rk4::run(engine, model, modulation, &grid, &mut traj)?,
    };
    let integrated_trace = integrals.r.trace().re;
    Ok(SimulationResult {
        times: traj.times,
        trace: traj.trace,
        singlet_probability: traj.p_s,
        radius: traj.radius,
        recombination_rate: traj.kb,
        singlet_yield: integrals.singlet_yield,
        integrated_state: integrals.r.to_dmatrix(),
        integrated_trace,
        final_trace: traj.final_trace,
        dt: grid.dt,
        steps: traj.steps,
        kf: model.rates.kf,
        layout: model.system.layout().clone(),
    })
}

/// A density operator: Hermitian, positive semidefinite, trace ≤ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: DMatrix<Complex64>,
    layout: Arc<HilbertLayout>,
}

impl DensityOperator {
    pub fn new(matrix: DMatrix<Complex64>, layout: Arc<HilbertLayout>) -> Result<Self> {
        let d = layout.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: matrix.nrows(),
            });
        }
        let defect = crate::spin::max_abs(&(&matrix - matrix.adjoint()));
        if defect > TOL.density_hermitian {
            return Err(Error::InvalidParameter(format!("density operator not Hermitian ({defect:.3e})")));
        }
        let tr = matrix.trace().re;
        if tr > 1.0 + TOL.density_hermitian {
            return Err(Error::InvalidParameter(format!("density operator trace {tr} exceeds 1")));
        }
        let min_ev = matrix.clone().symmetric_eigenvalues().min();
        if min_ev < -TOL.density_psd {
            return Err(Error::InvalidParameter(format!("density operator has eigenvalue {min_ev:.3e}")));
        }
        Ok(Self { matrix, layout })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }
}

/// σ_ss = R / Tr R.
pub fn steady_state(r: &DMatrix<Complex64>, layout: &Arc<HilbertLayout>) -> Result<DensityOperator> {
    let tr = r.trace().re;
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::DegenerateProbe(tr));
    }
    let mut sigma = r / Complex64::from(tr);
    sigma = (&sigma + sigma.adjoint()) * Complex64::from(0.5);
    DensityOperator::new(sigma, Arc::clone(layout))
}

/// Θ_S = Tr[P_S σ].
pub fn conditional_singlet_probability(sigma: &DensityOperator) -> Result<f64> {
    let ps = singlet_projector(sigma.layout())?;
    Ok((ps.matrix() * sigma.matrix()).trace().re.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests;
