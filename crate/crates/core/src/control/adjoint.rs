//! Exact gradient of the discrete singlet yield with respect to the segment
//! displacements.
//!
//! The yield computed by the exponential integrator is a sum over steps,
//!
//! Φ = Σ_n Tr[Ω_k ρ_n] + Tr[Ω'_k ρ_{n+1}],   ρ_{n+1} = 𝒫_k(ρ_n),
//!
//! with k the segment of step n, Ω_k = k_b(h/2 P_S + h²/12 L_k†P_S) and
//! Ω'_k = k_b(h/2 P_S − h²/12 L_k†P_S) (the Hermite quadrature written in
//! Heisenberg form). A backward sweep of the costate
//! Y_n = Ω_k + 𝒫_k†(Ω'_k + Y_{n+1}) collects, per segment, the operator C_k
//! that pairs with the derivative of the step propagator, which is obtained
//! from a block-triangular exponential.

use num_complex::Complex64;

use crate::dynamics::{initial_density, initial_wavefunctions, relax_in_place, Engine, KeyPlan, StepGrid};
use crate::error::{Error, Result};
use crate::linalg::CMat;

/// Per-segment operators.
struct Segment {
    prop: CMat,
    omega: CMat,
    omega_next: CMat,
    d_omega: CMat,
    d_omega_next: CMat,
    /// Direction of the exponent's derivative: (h or h/2)·∂M/∂r.
    exponent: CMat,
    d_exponent: CMat,
}

pub(crate) struct YieldGradient {
    pub singlet_yield: f64,
    pub gradient: Vec<f64>,
}

fn segment(engine: &Engine, r: f64, h: f64, relaxing: bool) -> Result<Segment> {
    let (m, kb) = engine.generator(r)?;
    let (dm, dkb) = engine.generator_derivative(r)?;
    let d = engine.d;
    let mut lp = CMat::zeros(d, d);
    let mut tmp = CMat::zeros(d, d);
    engine.adjoint_liouvillian_into(&m, &engine.ps, &mut lp, &mut tmp);
    // ∂(L†P) = P ∂M + ∂M† P
    let mut dlp = engine.ps.mul(&dm);
    dlp += &dm.adj_mul(&engine.ps);

    let (a, b) = (0.5 * h, h * h / 12.0);
    let combine = |c0: f64, p: &CMat, c1: f64, q: &CMat| {
        let mut out = p.clone();
        out.scale(c0);
        out.add_scaled(c1, q);
        out
    };
    let omega = combine(kb * a, &engine.ps, kb * b, &lp);
    let omega_next = combine(kb * a, &engine.ps, -kb * b, &lp);
    let mut d_omega = combine(dkb * a, &engine.ps, dkb * b, &lp);
    d_omega.add_scaled(kb * b, &dlp);
    let mut d_omega_next = combine(dkb * a, &engine.ps, -dkb * b, &lp);
    d_omega_next.add_scaled(-kb * b, &dlp);

    let tau = if relaxing { 0.5 * h } else { h };
    let exponent = m.scaled(Complex64::from(tau));
    Ok(Segment {
        prop: exponent.expm(),
        omega,
        omega_next,
        d_omega,
        d_omega_next,
        d_exponent: dm.scaled(Complex64::from(tau)),
        exponent,
    })
}

/// Φ_S and dΦ_S/du_k for a piecewise run on `grid` (which must use the
/// segment plan and the full horizon).
pub(crate) fn yield_gradient(engine: &Engine, radii: &[f64], grid: &StepGrid) -> Result<YieldGradient> {
    let KeyPlan::Segments { segments, .. } = grid.plan else {
        return Err(Error::Config("control step must divide the segment duration".into()));
    };
    if segments != radii.len() {
        return Err(Error::DimensionMismatch {
            expected: segments,
            actual: radii.len(),
        });
    }
    let relaxing = engine.gamma > 0.0;
    let h = grid.dt;
    let segs = radii
        .iter()
        .map(|&r| segment(engine, r, h, relaxing))
        .collect::<Result<Vec<_>>>()?;
    let key = |n: usize| grid.plan.key(n);
    let n_steps = grid.n_max;
    let (d, z) = (engine.d, engine.z);

    let mut a_sum = vec![CMat::zeros(d, d); segments];
    let mut b_sum = vec![CMat::zeros(d, d); segments];
    let mut c_sum = vec![CMat::zeros(d, d); segments];
    let mut y = CMat::zeros(d, d);
    let mut zn = CMat::zeros(d, d);
    let mut tmp = CMat::zeros(d, d);
    let mut tmp2 = CMat::zeros(d, d);
    let final_trace;

    if !relaxing {
        // Wavefunction blocks ψ_n, ρ_n = ψ_n ψ_n† / Z.
        let inv_z = 1.0 / z as f64;
        let mut psis = Vec::with_capacity(n_steps + 1);
        psis.push(initial_wavefunctions(z));
        let mut rho = CMat::zeros(d, d);
        for n in 0..n_steps {
            let mut next = CMat::zeros(d, z);
            CMat::mul_into(&segs[key(n)].prop, &psis[n], &mut next);
            psis.push(next);
        }
        for n in 0..=n_steps {
            CMat::mul_adj_into(&psis[n], &psis[n], &mut rho);
            rho.scale(inv_z);
            if n < n_steps {
                a_sum[key(n)] += &rho;
            }
            if n > 0 {
                b_sum[key(n - 1)] += &rho;
            }
        }
        final_trace = rho.trace().re;

        let mut row = CMat::zeros(z, d);
        for n in (0..n_steps).rev() {
            let s = &segs[key(n)];
            zn.copy_from(&s.omega_next);
            zn += &y;
            // C += ρ_n E† Z_{n+1} = ψ_n (ψ_{n+1}† Z_{n+1}) / Z
            CMat::adj_mul_into(&psis[n + 1], &zn, &mut row);
            CMat::mul_into(&psis[n], &row, &mut tmp);
            c_sum[key(n)].add_scaled(inv_z, &tmp);
            // Y_n = Ω + E† Z E
            CMat::adj_mul_into(&s.prop, &zn, &mut tmp);
            CMat::mul_into(&tmp, &s.prop, &mut y);
            y += &s.omega;
        }
    } else {
        let x = engine.gamma * h;
        let mut rhos = Vec::with_capacity(n_steps + 1);
        rhos.push(initial_density(engine));
        for n in 0..n_steps {
            let v = &segs[key(n)].prop;
            let mut next = CMat::zeros(d, d);
            CMat::mul_into(v, &rhos[n], &mut tmp);
            CMat::mul_adj_into(&tmp, v, &mut next);
            relax_in_place(&mut next, z, x);
            CMat::mul_into(v, &next, &mut tmp);
            CMat::mul_adj_into(&tmp, v, &mut next);
            a_sum[key(n)] += &rhos[n];
            b_sum[key(n)] += &next;
            rhos.push(next);
        }
        final_trace = rhos[n_steps].trace().re;

        let mut sigma = CMat::zeros(d, d);
        let mut w = CMat::zeros(d, d);
        for n in (0..n_steps).rev() {
            let s = &segs[key(n)];
            let v = &s.prop;
            zn.copy_from(&s.omega_next);
            zn += &y;
            // σ = R(V ρ_n V†)
            CMat::mul_into(v, &rhos[n], &mut tmp);
            CMat::mul_adj_into(&tmp, v, &mut sigma);
            relax_in_place(&mut sigma, z, x);
            // W = R(V† Z V)
            CMat::adj_mul_into(v, &zn, &mut tmp);
            CMat::mul_into(&tmp, v, &mut w);
            relax_in_place(&mut w, z, x);
            // C += σ V† Z + ρ V† W
            let c = &mut c_sum[key(n)];
            CMat::mul_adj_into(&sigma, v, &mut tmp);
            CMat::mul_into(&tmp, &zn, &mut tmp2);
            *c += &tmp2;
            CMat::mul_adj_into(&rhos[n], v, &mut tmp);
            CMat::mul_into(&tmp, &w, &mut tmp2);
            *c += &tmp2;
            // Y_n = Ω + V† W V
            CMat::adj_mul_into(v, &w, &mut tmp);
            CMat::mul_into(&tmp, v, &mut y);
            y += &s.omega;
        }
    }

    if engine.kf == 0.0 && final_trace >= grid.epsilon {
        return Err(Error::Horizon {
            trace: final_trace,
            t_max: grid.t_max,
        });
    }

    let mut singlet_yield = 0.0;
    let mut gradient = Vec::with_capacity(segments);
    for (k, s) in segs.iter().enumerate() {
        singlet_yield += CMat::trace_of_product(&s.omega, &a_sum[k]).re
            + CMat::trace_of_product(&s.omega_next, &b_sum[k]).re;
        let mut g = CMat::trace_of_product(&s.d_omega, &a_sum[k]).re
            + CMat::trace_of_product(&s.d_omega_next, &b_sum[k]).re;
        if c_sum[k].max_abs() > 0.0 {
            let (_, de) = CMat::expm_frechet(&s.exponent, &s.d_exponent);
            g += 2.0 * CMat::trace_of_product(&de, &c_sum[k]).re;
        }
        gradient.push(g);
    }
    debug_assert!({
        let rho0 = initial_density(engine);
        (CMat::trace_of_product(&y, &rho0).re - singlet_yield).abs() < 1e-9
    });
    Ok(YieldGradient {
        singlet_yield,
        gradient,
    })
}
