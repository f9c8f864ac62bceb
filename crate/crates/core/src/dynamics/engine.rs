//! Per-field operator cache and step-grid planning shared by the integrators
//! and the control gradient.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{IntegratorConfig, Scheme};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::model::{
    build_static_hamiltonian, dipolar_coupling, dipolar_form, distance_decay, exchange_form, radial_trajectory,
    FieldSpec, ModulationSpec, RadicalPairModel,
};
use crate::spin::singlet_projector;

/// Operators of one model at one field orientation, in kernel form.
#[derive(Debug, Clone)]
pub(crate) struct Engine {
    pub d: usize,
    pub z: usize,
    h0: CMat,
    dip: Option<CMat>,
    exch: Option<CMat>,
    pub ps: CMat,
    pub kf: f64,
    pub kb0: f64,
    pub gamma: f64,
    pub r0: f64,
    pub beta: f64,
    pub j0: f64,
}

impl Engine {
    pub fn new(model: &RadicalPairModel, field: &FieldSpec) -> Result<Self> {
        let sys = &model.system;
        let g = &model.geometry;
        let h0 = CMat::from_dmatrix(build_static_hamiltonian(sys, field)?.matrix());
        let dip = if g.dipolar {
            Some(CMat::from_dmatrix(&dipolar_form(sys, g.axis)?))
        } else {
            None
        };
        let exch = if g.exchange && g.j0 != 0.0 {
            Some(CMat::from_dmatrix(&exchange_form(sys)?))
        } else {
            None
        };
        let ps = CMat::from_dmatrix(singlet_projector(sys.layout())?.matrix());
        Ok(Self {
            d: sys.dim(),
            z: sys.nuclear_dim(),
            h0,
            dip,
            exch,
            ps,
            kf: model.rates.kf,
            kb0: model.rates.kb0,
            gamma: model.relaxation,
            r0: g.r0,
            beta: g.beta,
            j0: g.j0,
        })
    }

    pub fn kb(&self, r: f64) -> f64 {
        self.kb0 * distance_decay(self.beta, r, self.r0)
    }

    /// H(r) = H0 − d(r)·Dip − 2J(r)·S₁·S₂.
    pub fn hamiltonian(&self, r: f64) -> Result<CMat> {
        let mut h = self.h0.clone();
        if let Some(dip) = &self.dip {
            h.add_scaled(-dipolar_coupling(r)?, dip);
        }
        if let Some(x) = &self.exch {
            let j = self.j0 * distance_decay(self.beta, r, self.r0);
            h.add_scaled(-2.0 * j, x);
        }
        Ok(h)
    }

    /// M(r) = −i H_eff(r) = −iH(r) − ½(k_b(r) P_S + k_f I), and k_b(r).
    pub fn generator(&self, r: f64) -> Result<(CMat, f64)> {
        let h = self.hamiltonian(r)?;
        let kb = self.kb(r);
        let mut m = h.scaled(Complex64::new(0.0, -1.0));
        m.add_scaled(-0.5 * kb, &self.ps);
        add_diagonal(&mut m, -0.5 * self.kf);
        Ok((m, kb))
    }

    /// ∂M/∂r and ∂k_b/∂r at r.
    pub fn generator_derivative(&self, r: f64) -> Result<(CMat, f64)> {
        let mut dh = CMat::zeros(self.d, self.d);
        if let Some(dip) = &self.dip {
            // −d'(r) = 3 d(r) / r
            dh.add_scaled(3.0 * dipolar_coupling(r)? / r, dip);
        }
        if let Some(x) = &self.exch {
            // −2 J'(r) = 2 β J(r)
            let j = self.j0 * distance_decay(self.beta, r, self.r0);
            dh.add_scaled(2.0 * self.beta * j, x);
        }
        let dkb = -self.beta * self.kb(r);
        let mut dm = dh.scaled(Complex64::new(0.0, -1.0));
        dm.add_scaled(-0.5 * dkb, &self.ps);
        Ok((dm, dkb))
    }

    /// L X = M X + X M† (+ γ D X when relaxing).
    pub fn liouvillian_into(&self, m: &CMat, x: &CMat, out: &mut CMat, tmp: &mut CMat) {
        CMat::mul_into(m, x, out);
        CMat::mul_adj_into(x, m, tmp);
        *out += tmp;
        if self.gamma > 0.0 {
            super::rfr::dissipator_into(x, self.z, tmp);
            out.add_scaled(self.gamma, tmp);
        }
    }

    /// Adjoint action L† X = X M + M† X (+ γ D X; D is self-adjoint).
    pub fn adjoint_liouvillian_into(&self, m: &CMat, x: &CMat, out: &mut CMat, tmp: &mut CMat) {
        CMat::mul_into(x, m, out);
        CMat::adj_mul_into(m, x, tmp);
        *out += tmp;
        if self.gamma > 0.0 {
            super::rfr::dissipator_into(x, self.z, tmp);
            out.add_scaled(self.gamma, tmp);
        }
    }

    /// Tr(P_S ρ) using the layout's electron ordering.
    pub fn singlet_population(&self, rho: &CMat) -> f64 {
        singlet_population(rho, self.z)
    }
}

pub(crate) fn add_diagonal(m: &mut CMat, v: f64) {
    let n = m.rows();
    let (re, _) = m.parts_mut();
    for i in 0..n {
        re[i * n + i] += v;
    }
}

/// ½ Σ_n (ρ[Z+n,Z+n] + ρ[2Z+n,2Z+n] − 2 Re ρ[Z+n,2Z+n]).
pub(crate) fn singlet_population(rho: &CMat, z: usize) -> f64 {
    let d = 4 * z;
    let re = rho.re();
    let mut s = 0.0;
    for n in 0..z {
        let (a, b) = (z + n, 2 * z + n);
        s += re[a * d + a] + re[b * d + b] - re[b * d + a] - re[a * d + b];
    }
    0.5 * s
}

/// Upper bound on the spectral radius of H over the trajectory, independent
/// of the field direction: Zeeman + hyperfine + couplings at r0.
pub(crate) fn hamiltonian_scale(model: &RadicalPairModel) -> Result<f64> {
    let sys = &model.system;
    let b_mt = model.b0_ut * 1e-3;
    let g = sys.electron_gyro();
    let mut s = 0.5 * 2.0 * PI * b_mt * (g[0].abs() + g[1].abs());
    for n in sys.nuclei() {
        let a = n.tensor.angular();
        let sv = a.svd(false, false).singular_values;
        let i = n.multiplicity.spin();
        s += sv.max() * 0.75f64.sqrt() * (i * (i + 1.0)).sqrt();
    }
    let geo = &model.geometry;
    if geo.dipolar {
        s += dipolar_coupling(geo.r0)?;
    }
    if geo.exchange {
        s += 1.5 * geo.j0.abs();
    }
    Ok(s)
}

/// How steps share propagators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum KeyPlan {
    /// One generator for every step.
    Static,
    /// Generator repeats every `period` steps and is mirror-symmetric inside
    /// the period.
    Periodic { period: usize },
    /// `steps_per_segment` steps per control segment; steps past the last
    /// segment reuse its key.
    Segments { steps_per_segment: usize, segments: usize },
    /// Every step has its own generator.
    Unique,
}

impl KeyPlan {
    pub fn key(&self, n: usize) -> usize {
        match *self {
            KeyPlan::Static => 0,
            KeyPlan::Periodic { period } => {
                let j = n % period;
                j.min(period - 1 - j)
            }
            KeyPlan::Segments {
                steps_per_segment,
                segments,
            } => (n / steps_per_segment).min(segments - 1),
            KeyPlan::Unique => n,
        }
    }

    /// Number of distinct keys reachable in `n_steps` steps.
    pub fn distinct(&self, n_steps: usize) -> usize {
        match *self {
            KeyPlan::Static => 1,
            KeyPlan::Periodic { period } => period.div_ceil(2).min(n_steps),
            KeyPlan::Segments {
                steps_per_segment,
                segments,
            } => segments.min(n_steps.div_ceil(steps_per_segment)),
            KeyPlan::Unique => n_steps,
        }
    }
}

/// Resolved time grid of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StepGrid {
    pub dt: f64,
    pub n_max: usize,
    pub t_max: f64,
    pub epsilon: f64,
    pub plan: KeyPlan,
    pub scheme: Scheme,
    pub full_horizon: bool,
}

impl StepGrid {
    /// Whether stepping continues at step `n` with trace `trace`.
    pub fn proceed(&self, n: usize, trace: f64) -> bool {
        n < self.n_max && (self.full_horizon || trace >= self.epsilon)
    }
}

impl StepGrid {
    pub fn resolve(model: &RadicalPairModel, modulation: &ModulationSpec, cfg: &IntegratorConfig) -> Result<Self> {
        let nu = modulation.frequency_mhz();
        let scale = hamiltonian_scale(model)? / (2.0 * PI);
        let bound = 1.0 / (20.0 * nu.max(scale).max(f64::MIN_POSITIVE));
        if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
            return Err(Error::Config(format!("trace cutoff {} must lie in (0, 1)", cfg.epsilon)));
        }
        let t_max = match cfg.t_max {
            Some(t) if t > 0.0 && t.is_finite() => t,
            Some(t) => return Err(Error::Config(format!("horizon {t} us must be positive"))),
            None => {
                if model.rates.kf > 0.0 {
                    15.0 / model.rates.kf
                } else if model.rates.kb0 > 0.0 {
                    // Without escape only recombination empties the pair; give a
                    // pure singlet decay time to fall well below the cutoff.
                    15.0f64.max(1.5 * (1.0 / cfg.epsilon).ln()) / model.rates.kb0
                } else {
                    return Err(Error::Config("k_f = k_b0 = 0: the pair never decays, set a horizon".into()));
                }
            }
        };
        let (dt, plan) = match cfg.dt {
            Some(dt) => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(Error::Config(format!("step {dt} us must be positive")));
                }
                if dt > bound * (1.0 + 1e-9) {
                    return Err(Error::Config(format!(
                        "step {dt} us exceeds the resolution bound {bound:.3e} us"
                    )));
                }
                (dt, plan_for(modulation, dt, false))
            }
            None => {
                let base: f64 = if nu >= 10.0 { 1e-4 } else { 1e-3 };
                let dt0 = base.min(bound);
                let dt = match modulation {
                    ModulationSpec::Harmonic { nu_mhz, .. } => {
                        let period = 1.0 / nu_mhz;
                        period / (period / dt0).ceil()
                    }
                    ModulationSpec::Piecewise(p) => p.segment_us() / (p.segment_us() / dt0).ceil(),
                    ModulationSpec::Static => dt0,
                };
                (dt, plan_for(modulation, dt, true))
            }
        };
        let n_max = (t_max / dt).ceil() as usize;
        Ok(Self {
            dt,
            n_max,
            t_max: n_max as f64 * dt,
            epsilon: cfg.epsilon,
            plan,
            scheme: cfg.scheme,
            full_horizon: cfg.full_horizon,
        })
    }
}

fn plan_for(modulation: &ModulationSpec, dt: f64, adjusted: bool) -> KeyPlan {
    let ratio = |span: f64| -> Option<usize> {
        let q = span / dt;
        let n = q.round();
        if n >= 1.0 && (adjusted || (q - n).abs() <= 1e-9 * q) {
            Some(n as usize)
        } else {
            None
        }
    };
    match modulation {
        ModulationSpec::Static => KeyPlan::Static,
        ModulationSpec::Harmonic { nu_mhz, .. } => match ratio(1.0 / nu_mhz) {
            Some(period) => KeyPlan::Periodic { period },
            None => KeyPlan::Unique,
        },
        ModulationSpec::Piecewise(p) => match ratio(p.segment_us()) {
            Some(steps_per_segment) => KeyPlan::Segments {
                steps_per_segment,
                segments: p.displacements().len(),
            },
            None => KeyPlan::Unique,
        },
    }
}

/// r at the midpoint of step `n`.
pub(crate) fn midpoint_r(modulation: &ModulationSpec, model: &RadicalPairModel, grid: &StepGrid, n: usize) -> Result<f64> {
    let t = (n as f64 + 0.5) * grid.dt;
    match (modulation, grid.plan) {
        // Evaluate the segment by index so that rounding in t never picks
        // the neighbouring segment.
        (ModulationSpec::Piecewise(p), KeyPlan::Segments { .. }) => {
            let k = grid.plan.key(n);
            Ok(model.geometry.r0 + p.displacements()[k])
        }
        _ => radial_trajectory(modulation, &model.geometry, t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_keys_are_mirror_symmetric() {
        let p = KeyPlan::Periodic { period: 5 };
        let keys: Vec<_> = (0..10).map(|n| p.key(n)).collect();
        assert_eq!(keys, [0, 1, 2, 1, 0, 0, 1, 2, 1, 0]);
        assert_eq!(p.distinct(100), 3);
    }

    #[test]
    fn segment_keys_hold_final_value() {
        let p = KeyPlan::Segments {
            steps_per_segment: 2,
            segments: 3,
        };
        let keys: Vec<_> = (0..9).map(|n| p.key(n)).collect();
        assert_eq!(keys, [0, 0, 1, 1, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn singlet_population_matches_trace_formula() {
        let z = 3;
        let d = 4 * z;
        let mut rho = CMat::zeros(d, d);
        for j in 0..d {
            for i in 0..d {
                rho.set(i, j, Complex64::new(((i * 7 + j * 3) % 5) as f64, (i as f64 - j as f64) * 0.1));
            }
        }
        let layout = std::sync::Arc::new(crate::spin::HilbertLayout::radical_pair(
            &[crate::spin::SpinMultiplicity::ONE],
            &[],
        ));
        let ps = CMat::from_dmatrix(singlet_projector(&layout).unwrap().matrix());
        let want = CMat::trace_of_product(&ps, &rho).re;
        assert!((singlet_population(&rho, z) - want).abs() < 1e-12);
    }
}
