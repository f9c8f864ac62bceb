//! Optimal control of the interradical distance.
//!
//! A piecewise-constant displacement sequence u_j ∈ [0, u_max] (Å, one value
//! per segment of duration δt, held after the last segment) is optimized to
//! maximize the yield contrast between the two field orientations where the
//! static yield is largest and smallest:
//!
//! J(u) = Φ_S(B_max; u) − Φ_S(B_min; u) − λ Σ_j (u_{j+1} − u_j)².
//!
//! Gradients come from an exact discrete adjoint of the integrator, so they
//! agree with finite differences of `objective` up to rounding.

mod adjoint;
mod optimizer;

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::dynamics::{propagate, propagate_with, Engine, IntegratorConfig, StepGrid};
use crate::error::{Error, Result};
use crate::metrology::{anisotropy, OrientationGrid};
use crate::model::{FieldSpec, ModulationSpec, PiecewiseTrajectory, RadicalPairModel};

pub use optimizer::{maximize, Objective, OptimizerSettings, OptimizerTrace};

/// Yield-contrast control problem at two fixed orientations.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    model: RadicalPairModel,
    field_max: FieldSpec,
    field_min: FieldSpec,
    segments: usize,
    segment_us: f64,
    u_max: f64,
    lambda: f64,
    integrator: IntegratorConfig,
    engines: [Engine; 2],
    grid: StepGrid,
}

/// Objective terms at one control sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub phi_max: f64,
    pub phi_min: f64,
    pub penalty: f64,
    /// Φ_max − Φ_min − penalty.
    pub objective: f64,
}

impl Evaluation {
    /// Φ_max − Φ_min.
    pub fn contrast(&self) -> f64 {
        self.phi_max - self.phi_min
    }

    /// Two-point relative anisotropy (Φ_max − Φ_min) / mean.
    pub fn gamma(&self) -> f64 {
        let mean = 0.5 * (self.phi_max + self.phi_min);
        if mean > 0.0 {
            self.contrast() / mean
        } else {
            0.0
        }
    }
}

impl ControlProblem {
    /// Smoothness weight used when none is given, per Å².
    pub const DEFAULT_LAMBDA: f64 = 1e-3;

    pub fn new(
        model: RadicalPairModel,
        field_max: FieldSpec,
        field_min: FieldSpec,
        segments: usize,
        segment_us: f64,
        u_max: f64,
        lambda: f64,
    ) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidParameter("control needs at least one segment".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("smoothness weight {lambda}")));
        }
        // Validates δt and u_max.
        PiecewiseTrajectory::new(segment_us, vec![0.0; segments], u_max)?;
        let engines = [Engine::new(&model, &field_max)?, Engine::new(&model, &field_min)?];
        let (integrator, grid) = control_grid(&model, segments, segment_us, u_max, IntegratorConfig::default())?;
        Ok(Self {
            model,
            field_max,
            field_min,
            segments,
            segment_us,
            u_max,
            lambda,
            integrator,
            engines,
            grid,
        })
    }

    /// Orientations from the extrema of the static yield over `grid`.
    pub fn from_static_extrema(
        model: RadicalPairModel,
        grid: &OrientationGrid,
        segments: usize,
        segment_us: f64,
        u_max: f64,
        lambda: f64,
    ) -> Result<Self> {
        let (field_max, field_min) = static_extrema(&model, grid, &IntegratorConfig::default())?;
        Self::new(model, field_max, field_min, segments, segment_us, u_max, lambda)
    }

    /// Replace the integrator settings. Every step up to T_max is always
    /// taken so that the objective is smooth in u.
    pub fn with_integrator(mut self, cfg: IntegratorConfig) -> Result<Self> {
        (self.integrator, self.grid) = control_grid(&self.model, self.segments, self.segment_us, self.u_max, cfg)?;
        Ok(self)
    }

    pub fn model(&self) -> &RadicalPairModel {
        &self.model
    }

    pub fn fields(&self) -> (FieldSpec, FieldSpec) {
        (self.field_max, self.field_min)
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn segment_us(&self) -> f64 {
        self.segment_us
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Integrator step of every propagation in this problem, µs.
    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn trajectory(&self, u: &[f64]) -> Result<ModulationSpec> {
        if u.len() != self.segments {
            return Err(Error::DimensionMismatch {
                expected: self.segments,
                actual: u.len(),
            });
        }
        Ok(ModulationSpec::Piecewise(PiecewiseTrajectory::new(self.segment_us, u.to_vec(), self.u_max)?))
    }

    /// λ Σ (u_{j+1} − u_j)².
    pub fn penalty(&self, u: &[f64]) -> f64 {
        self.lambda * u.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>()
    }

    fn penalty_gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        for j in 0..u.len().saturating_sub(1) {
            let diff = 2.0 * self.lambda * (u[j + 1] - u[j]);
            g[j] -= diff;
            g[j + 1] += diff;
        }
        g
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Evaluation> {
        let modulation = self.trajectory(u)?;
        let run = |engine: &Engine| propagate_with(engine, &self.model, &modulation, &self.integrator);
        let (a, b) = rayon::join(|| run(&self.engines[0]), || run(&self.engines[1]));
        let (phi_max, phi_min) = (a?.singlet_yield, b?.singlet_yield);
        let penalty = self.penalty(u);
        Ok(Evaluation {
            phi_max,
            phi_min,
            penalty,
            objective: phi_max - phi_min - penalty,
        })
    }

    pub fn objective(&self, u: &[f64]) -> Result<f64> {
        Ok(self.evaluate(u)?.objective)
    }

    /// Objective terms and ∂J/∂u_j.
    pub fn gradient(&self, u: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        // Validates length and bounds.
        self.trajectory(u)?;
        let radii: Vec<f64> = u.iter().map(|x| self.model.geometry.r0 + x).collect();
        let run = |engine: &Engine| adjoint::yield_gradient(engine, &radii, &self.grid);
        let (a, b) = rayon::join(|| run(&self.engines[0]), || run(&self.engines[1]));
        let (a, b) = (a?, b?);
        let penalty = self.penalty(u);
        let pg = self.penalty_gradient(u);
        let grad = (0..u.len()).map(|j| a.gradient[j] - b.gradient[j] - pg[j]).collect();
        Ok((
            Evaluation {
                phi_max: a.singlet_yield,
                phi_min: b.singlet_yield,
                penalty,
                objective: a.singlet_yield - b.singlet_yield - penalty,
            },
            grad,
        ))
    }

    /// u_j = (u_max/2)(1 − cos 2πν t_j) at segment midpoints: the harmonic
    /// trajectory with full-range amplitude.
    pub fn harmonic_warm_start(&self, nu_mhz: f64) -> Vec<f64> {
        (0..self.segments)
            .map(|j| {
                let t = (j as f64 + 0.5) * self.segment_us;
                (0.5 * self.u_max * (1.0 - (2.0 * PI * nu_mhz * t).cos())).clamp(0.0, self.u_max)
            })
            .collect()
    }

    /// Objective of the harmonic shapes at each frequency, within this
    /// problem's horizon and bounds.
    pub fn harmonic_scan(&self, nus_mhz: &[f64]) -> Result<Vec<(f64, Evaluation)>> {
        nus_mhz
            .iter()
            .map(|&nu| Ok((nu, self.evaluate(&self.harmonic_warm_start(nu))?)))
            .collect()
    }

    /// Best starting point among u ≡ 0 and the harmonic shapes at `nus_mhz`.
    pub fn warm_start(&self, nus_mhz: &[f64]) -> Result<WarmStart> {
        let zero = vec![0.0; self.segments];
        let mut best = WarmStart {
            evaluation: self.evaluate(&zero)?,
            displacements: zero,
            nu_mhz: None,
        };
        for (nu, evaluation) in self.harmonic_scan(nus_mhz)? {
            if evaluation.objective > best.evaluation.objective {
                best = WarmStart {
                    displacements: self.harmonic_warm_start(nu),
                    evaluation,
                    nu_mhz: Some(nu),
                };
            }
        }
        Ok(best)
    }
}

/// Initial sequence chosen by [`ControlProblem::warm_start`].
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub displacements: Vec<f64>,
    pub evaluation: Evaluation,
    /// Frequency of the chosen harmonic shape; None for the static start.
    pub nu_mhz: Option<f64>,
}

fn control_grid(
    model: &RadicalPairModel,
    segments: usize,
    segment_us: f64,
    u_max: f64,
    mut cfg: IntegratorConfig,
) -> Result<(IntegratorConfig, StepGrid)> {
    cfg.record_series = false;
    cfg.full_horizon = true;
    let probe = ModulationSpec::Piecewise(PiecewiseTrajectory::new(segment_us, vec![0.0; segments], u_max)?);
    let grid = StepGrid::resolve(model, &probe, &cfg)?;
    Ok((cfg, grid))
}

/// Orientations of largest and smallest static yield over `grid` (first
/// index on ties).
pub fn static_extrema(
    model: &RadicalPairModel,
    grid: &OrientationGrid,
    cfg: &IntegratorConfig,
) -> Result<(FieldSpec, FieldSpec)> {
    let cfg = cfg.clone().without_series();
    let yields = grid
        .points()
        .iter()
        .map(|&(theta, phi)| {
            let field = model.field(theta, phi)?;
            Ok(propagate(model, &field, &ModulationSpec::Static, &cfg)?.singlet_yield)
        })
        .collect::<Result<Vec<_>>>()?;
    let a = anisotropy(&yields)?;
    let pick = |i: usize| {
        let (theta, phi) = grid.points()[i];
        model.field(theta, phi)
    };
    Ok((pick(a.argmax)?, pick(a.argmin)?))
}

impl Objective for ControlProblem {
    fn dim(&self) -> usize {
        self.segments
    }

    fn upper_bound(&self) -> f64 {
        self.u_max
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        self.objective(u)
    }

    fn value_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (e, g) = self.gradient(u)?;
        Ok((e.objective, g))
    }
}

/// Outcome of an optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlResult {
    pub displacements: Vec<f64>,
    pub segment_us: f64,
    /// Objective after each accepted iterate, starting with the initial one.
    pub history: Vec<f64>,
    pub initial: Evaluation,
    pub last: Evaluation,
    pub iterations: usize,
    pub converged: bool,
    /// No ascent direction at the first iterate.
    pub stagnated: bool,
}

impl ControlResult {
    pub fn contrast(&self) -> f64 {
        self.last.contrast()
    }

    pub fn gamma(&self) -> f64 {
        self.last.gamma()
    }

    /// Columns `index,t_start_us,u_A`.
    pub fn write_sequence<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_sequence(w, &self.displacements, self.segment_us)
    }

    /// Columns `iteration,objective`.
    pub fn write_history<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,objective")?;
        for (i, v) in self.history.iter().enumerate() {
            writeln!(w, "{i},{v:.8e}")?;
        }
        Ok(())
    }
}

/// Projected gradient ascent from `initial` (clamped into the bounds).
pub fn optimize(problem: &ControlProblem, initial: &[f64], settings: &OptimizerSettings) -> Result<ControlResult> {
    let start: Vec<f64> = initial.iter().map(|x| x.clamp(0.0, problem.u_max)).collect();
    let initial_eval = problem.evaluate(&start)?;
    let trace = maximize(problem, &start, settings)?;
    let last = problem.evaluate(&trace.x)?;
    Ok(ControlResult {
        displacements: trace.x,
        segment_us: problem.segment_us,
        history: trace.history,
        initial: initial_eval,
        last,
        iterations: trace.iterations,
        converged: trace.converged,
        stagnated: trace.stagnated,
    })
}

/// Writes `index,t_start_us,u_A` rows.
pub fn write_sequence<W: Write>(mut w: W, u: &[f64], segment_us: f64) -> std::io::Result<()> {
    writeln!(w, "index,t_start_us,u_A")?;
    for (j, x) in u.iter().enumerate() {
        writeln!(w, "{j},{:.8e},{x:.8e}", j as f64 * segment_us)?;
    }
    Ok(())
}

/// Reads a sequence written by [`write_sequence`]; returns u and, for two
/// or more rows, the segment duration.
pub fn read_sequence<R: BufRead>(r: R) -> Result<(Vec<f64>, Option<f64>)> {
    let bad = |line: usize, what: &str| Error::Config(format!("control sequence line {line}: {what}"));
    let mut u = Vec::new();
    let mut starts = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "index,t_start_us,u_A" {
                return Err(bad(1, "expected header index,t_start_us,u_A"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(i + 1, "expected 3 columns"));
        }
        let index: usize = cols[0].parse().map_err(|_| bad(i + 1, "bad index"))?;
        if index != u.len() {
            return Err(bad(i + 1, "indices must be consecutive from 0"));
        }
        starts.push(cols[1].parse::<f64>().map_err(|_| bad(i + 1, "bad start time"))?);
        u.push(cols[2].parse::<f64>().map_err(|_| bad(i + 1, "bad displacement"))?);
    }
    let segment_us = match starts.len() {
        0 => return Err(Error::Config("empty control sequence".into())),
        1 => None,
        n => Some((starts[n - 1] - starts[0]) / (n - 1) as f64),
    };
    Ok((u, segment_us))
}

#[cfg(test)]
mod tests;
