//! Piecewise-exponential integrator.
//!
//! The generator is frozen at the midpoint of every step. Steps that share a
//! generator (same key) share one cached exponential, and the integral of ρ
//! over all steps of a key is assembled once at the end:
//!
//! ∫ρ ≈ Σ_steps [h/2 (ρ_n + ρ_{n+1}) + h²/12 · L(ρ_n − ρ_{n+1})],
//!
//! the Hermite-corrected trapezoid rule, which is fourth-order accurate for a
//! step with constant generator L. Because L is linear the correction can be
//! applied to the per-key sums A = Σρ_n and B = Σρ_{n+1}.
//!
//! Once the generator sequence becomes periodic (always for static and
//! harmonic runs, after the last segment for control sequences) and no
//! per-step series is requested, the remaining steps are not taken one by
//! one. With W_j the propagator over the first j steps of a period and
//! U = W_P, the per-phase sums are W_j T W_j† with T = Σ_k U^k ρ U^k†; T is
//! assembled by doubling in O(log K) products and then stepped through one
//! period.

use num_complex::Complex64;

use super::engine::{midpoint_r, Engine, KeyPlan, StepGrid};
use super::rfr::relax_in_place;
use super::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::model::{ModulationSpec, RadicalPairModel};

/// Budget for cached per-key matrices, in bytes.
const CACHE_BYTES: usize = 32 << 20;

struct KeyEntry {
    m: CMat,
    kb: f64,
    /// exp(hM) for wavefunctions, exp(hM/2) for the split density step.
    prop: CMat,
    a: CMat,
    b: CMat,
}

pub(crate) struct Integrals {
    pub r: CMat,
    pub singlet_yield: f64,
}

impl Integrals {
    fn new(d: usize) -> Self {
        Self {
            r: CMat::zeros(d, d),
            singlet_yield: 0.0,
        }
    }

    /// Add the Hermite-trapezoid integral of one key (or one step).
    fn fold(&mut self, engine: &Engine, h: f64, m: &CMat, kb: f64, a: &CMat, b: &CMat, scratch: &mut Scratch) {
        let q = &mut scratch.q;
        q.copy_from(a);
        *q += b;
        q.scale(0.5 * h);
        scratch.diff.copy_from(a);
        scratch.diff -= b;
        engine.liouvillian_into(m, &scratch.diff, &mut scratch.l, &mut scratch.tmp);
        q.add_scaled(h * h / 12.0, &scratch.l);
        if kb != 0.0 {
            self.singlet_yield += kb * engine.singlet_population(q);
        }
        self.r += q;
    }
}

struct Scratch {
    q: CMat,
    diff: CMat,
    l: CMat,
    tmp: CMat,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            q: CMat::zeros(d, d),
            diff: CMat::zeros(d, d),
            l: CMat::zeros(d, d),
            tmp: CMat::zeros(d, d),
        }
    }
}

pub(crate) fn cache_capacity(d: usize) -> usize {
    (CACHE_BYTES / (4 * 16 * d * d)).max(1)
}

fn key_space(plan: KeyPlan) -> usize {
    match plan {
        KeyPlan::Static => 1,
        KeyPlan::Periodic { period } => period.div_ceil(2),
        KeyPlan::Segments { segments, .. } => segments,
        KeyPlan::Unique => 0,
    }
}

/// Batched singlet wavefunctions |S⟩⊗|k⟩, one column per nuclear state.
pub(crate) fn initial_wavefunctions(z: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut psi = CMat::zeros(4 * z, z);
    for k in 0..z {
        psi.set(z + k, k, Complex64::new(s, 0.0));
        psi.set(2 * z + k, k, Complex64::new(-s, 0.0));
    }
    psi
}

/// P_S / Z.
pub(crate) fn initial_density(engine: &Engine) -> CMat {
    let mut rho = engine.ps.clone();
    rho.scale(1.0 / engine.z as f64);
    rho
}

pub(crate) fn run(
    engine: &Engine,
    model: &RadicalPairModel,
    modulation: &ModulationSpec,
    grid: &StepGrid,
    traj: &mut Trajectory,
    force_density: bool,
) -> Result<Integrals> {
    let d = engine.d;
    let z = engine.z;
    let h = grid.dt;
    let relaxing = engine.gamma > 0.0 || force_density;
    let distinct = grid.plan.distinct(grid.n_max);
    let cached = grid.plan != KeyPlan::Unique && distinct <= cache_capacity(d) && distinct < grid.n_max;
    let mut entries: Vec<Option<KeyEntry>> = if cached {
        (0..key_space(grid.plan)).map(|_| None).collect()
    } else {
        Vec::new()
    };

    let make_entry = |n: usize| -> Result<KeyEntry> {
        let r = midpoint_r(modulation, model, grid, n)?;
        let (m, kb) = engine.generator(r)?;
        let scale = if relaxing { 0.5 * h } else { h };
        let prop = m.scaled(Complex64::from(scale)).expm();
        Ok(KeyEntry {
            m,
            kb,
            prop,
            a: CMat::zeros(d, d),
            b: CMat::zeros(d, d),
        })
    };

    let mut out = Integrals::new(d);
    let mut scratch = Scratch::new(d);
    let mut psi = initial_wavefunctions(z);
    let mut psi_next = CMat::zeros(d, z);
    let mut rho = initial_density(engine);
    let mut rho_next = CMat::zeros(d, d);
    let mut tmp = CMat::zeros(d, d);
    let inv_z = 1.0 / z as f64;

    traj.push(engine, modulation, model, 0.0, &rho)?;
    let tail = if cached && !relaxing && !traj.recording() {
        periodic_tail(grid.plan, grid.n_max)
    } else {
        None
    };
    let stop = tail.map_or(grid.n_max, |(start, _)| start);
    let mut trace = 1.0;
    let mut n = 0;
    while n < stop && grid.proceed(n, trace) {
        let mut streamed;
        let entry: &mut KeyEntry = if cached {
            let key = grid.plan.key(n);
            if entries[key].is_none() {
                entries[key] = Some(make_entry(n)?);
            }
            entries[key].as_mut().expect("entry just created")
        } else {
            streamed = make_entry(n)?;
            &mut streamed
        };

        if relaxing {
            CMat::mul_into(&entry.prop, &rho, &mut tmp);
            CMat::mul_adj_into(&tmp, &entry.prop, &mut rho_next);
            relax_in_place(&mut rho_next, z, engine.gamma * h);
            CMat::mul_into(&entry.prop, &rho_next, &mut tmp);
            CMat::mul_adj_into(&tmp, &entry.prop, &mut rho_next);
        } else {
            CMat::mul_into(&entry.prop, &psi, &mut psi_next);
            CMat::mul_adj_into(&psi_next, &psi_next, &mut rho_next);
            rho_next.scale(inv_z);
            std::mem::swap(&mut psi, &mut psi_next);
        }

        if cached {
            entry.a += &rho;
            entry.b += &rho_next;
        } else {
            out.fold(engine, h, &entry.m, entry.kb, &rho, &rho_next, &mut scratch);
        }
        std::mem::swap(&mut rho, &mut rho_next);
        n += 1;
        trace = rho.trace().re;
        traj.push(engine, modulation, model, n as f64 * h, &rho)?;
    }

    if let (Some((start, period)), true) = (tail, n == stop && grid.proceed(n, trace)) {
        for j in 0..period {
            let key = grid.plan.key(start + j);
            if entries[key].is_none() {
                entries[key] = Some(make_entry(start + j)?);
            }
        }
        let count = grid.n_max - start;
        let (full, rem) = (count / period, count % period);
        // One-period propagator.
        let mut w = CMat::identity(d);
        for j in 0..period {
            let key = grid.plan.key(start + j);
            CMat::mul_into(&entries[key].as_ref().expect("cached").prop, &w, &mut tmp);
            std::mem::swap(&mut w, &mut tmp);
        }
        // Per phase j: S_j = W_j (Σ_k U^k ρ U^k†) W_j† covers the full periods,
        // L_j = W_j U^K ρ U^K† W_j† the partial one.
        let (mut sum, mut last) = geometric_sum(&w, &rho, full);
        for j in 0..period {
            let entry = entries[grid.plan.key(start + j)].as_mut().expect("cached");
            entry.a += &sum;
            conjugate_into(&entry.prop, &sum, &mut rho_next, &mut tmp);
            std::mem::swap(&mut sum, &mut rho_next);
            entry.b += &sum;
            if j < rem {
                entry.a += &last;
                conjugate_into(&entry.prop, &last, &mut rho_next, &mut tmp);
                std::mem::swap(&mut last, &mut rho_next);
                entry.b += &last;
            }
        }
        rho = last;
        n = grid.n_max;
        trace = rho.trace().re;
    }

    for entry in entries.iter().flatten() {
        out.fold(engine, h, &entry.m, entry.kb, &entry.a, &entry.b, &mut scratch);
    }
    out.r.hermitize();
    traj.finish(n, trace);
    if trace >= grid.epsilon && engine.kf == 0.0 {
        return Err(Error::Horizon {
            trace,
            t_max: grid.t_max,
        });
    }
    Ok(out)
}

/// Start step and period of the part of the run whose keys repeat, when it
/// holds at least two full periods.
fn periodic_tail(plan: KeyPlan, n_max: usize) -> Option<(usize, usize)> {
    let (start, period) = match plan {
        KeyPlan::Static => (0, 1),
        KeyPlan::Periodic { period } => (0, period),
        KeyPlan::Segments {
            steps_per_segment,
            segments,
        } => ((segments - 1) * steps_per_segment, 1),
        KeyPlan::Unique => return None,
    };
    (n_max >= start && (n_max - start) / period >= 2).then_some((start, period))
}

/// out = w x w†.
fn conjugate_into(w: &CMat, x: &CMat, out: &mut CMat, tmp: &mut CMat) {
    CMat::mul_into(w, x, tmp);
    CMat::mul_adj_into(tmp, w, out);
}

/// (Σ_{k<count} U^k x U^k†, U^count x U^count†) by binary doubling.
fn geometric_sum(u: &CMat, x: &CMat, count: usize) -> (CMat, CMat) {
    let d = u.rows();
    let mut sum = CMat::zeros(d, d);
    let mut power = CMat::identity(d);
    let (mut t1, mut t2) = (CMat::zeros(d, d), CMat::zeros(d, d));
    for bit in (0..usize::BITS - count.leading_zeros()).rev() {
        // sum_{2a} = sum_a + U^a sum_a U^a†
        conjugate_into(&power, &sum, &mut t1, &mut t2);
        sum += &t1;
        CMat::mul_into(&power, &power.clone(), &mut t1);
        std::mem::swap(&mut power, &mut t1);
        if count >> bit & 1 == 1 {
            // sum_{a+1} = x + U sum_a U†
            conjugate_into(u, &sum, &mut t1, &mut t2);
            sum.copy_from(x);
            sum += &t1;
            CMat::mul_into(u, &power.clone(), &mut t1);
            std::mem::swap(&mut power, &mut t1);
        }
    }
    let mut last = CMat::zeros(d, d);
    conjugate_into(&power, x, &mut last, &mut t2);
    (sum, last)
}
