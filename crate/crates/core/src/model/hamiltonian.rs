use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{dipolar_coupling, exchange_coupling, FieldSpec, GeometryCouplings, Radical, SpinSystem};
use crate::error::{Error, Result};
use crate::spin::{electron_spins, embedded_spin, singlet_projector, Operator, SpinVector};

/// Zeeman plus hyperfine part: Σ_i ω_i·S_i + Σ S_i·A·I.
///
/// ω_i = −γ_i B with γ_i taken from the system's electron gyromagnetic ratios.
pub fn build_static_hamiltonian(system: &SpinSystem, field: &FieldSpec) -> Result<Operator> {
    let layout = system.layout();
    let (s1, s2) = electron_spins(layout)?;
    let b = field.vector_mt();
    let d = layout.dim();
    let mut h = DMatrix::<Complex64>::zeros(d, d);
    for (spin, gyro) in [(&s1, system.electron_gyro()[0]), (&s2, system.electron_gyro()[1])] {
        let scale = -2.0 * PI * gyro;
        h += spin.project(b.map(|c| c * scale));
    }
    for (k, nucleus) in system.nuclei().iter().enumerate() {
        let electron = match nucleus.radical {
            Radical::One => &s1,
            Radical::Two => &s2,
        };
        let nuc = embedded_spin(layout, 2 + k)?;
        h += hyperfine_term(electron, nucleus.tensor.angular(), &nuc);
    }
    let mut op = Operator::new(h, layout.clone())?;
    hermitize(&mut op);
    Ok(op)
}

fn hyperfine_term(s: &SpinVector, a: &nalgebra::Matrix3<f64>, i: &SpinVector) -> DMatrix<Complex64> {
    let sc = s.components();
    let ic = i.components();
    let d = s.x.dim();
    let mut out = DMatrix::<Complex64>::zeros(d, d);
    for p in 0..3 {
        for q in 0..3 {
            let v = a[(p, q)];
            if v != 0.0 {
                out += (sc[p].matrix() * ic[q].matrix()) * Complex64::from(v);
            }
        }
    }
    out
}

/// 3(S₁·u)(S₂·u) − S₁·S₂.
pub fn dipolar_form(system: &SpinSystem, axis: [f64; 3]) -> Result<DMatrix<Complex64>> {
    let (s1, s2) = electron_spins(system.layout())?;
    Ok(s1.project(axis) * s2.project(axis) * Complex64::from(3.0) - s1.dot(&s2))
}

/// S₁·S₂.
pub fn exchange_form(system: &SpinSystem) -> Result<DMatrix<Complex64>> {
    let (s1, s2) = electron_spins(system.layout())?;
    Ok(s1.dot(&s2))
}

/// −d(r)[3(S₁·u)(S₂·u) − S₁·S₂] − 2J(r) S₁·S₂, with disabled terms omitted.
pub fn build_interaction_hamiltonian(
    system: &SpinSystem,
    geometry: &GeometryCouplings,
    r: f64,
) -> Result<Operator> {
    let layout = system.layout();
    let d = layout.dim();
    let mut h = DMatrix::<Complex64>::zeros(d, d);
    if geometry.dipolar {
        let dd = dipolar_coupling(r)?;
        h -= dipolar_form(system, geometry.axis)? * Complex64::from(dd);
    }
    if geometry.exchange {
        let j = exchange_coupling(geometry.j0, geometry.beta, r, geometry.r0)?;
        if j != 0.0 {
            h -= exchange_form(system)? * Complex64::from(2.0 * j);
        }
    }
    let mut op = Operator::new(h, layout.clone())?;
    hermitize(&mut op);
    Ok(op)
}

/// H − (i/2)(k_b P_S + k_f I).
pub fn effective_hamiltonian(h: &Operator, kb: f64, kf: f64) -> Result<Operator> {
    if kb < 0.0 || kf < 0.0 {
        return Err(Error::InvalidParameter(format!("negative rate (kb={kb}, kf={kf})")));
    }
    let ps = singlet_projector(h.layout())?;
    let d = h.dim();
    let decay = ps.matrix() * Complex64::new(0.0, -0.5 * kb)
        + DMatrix::<Complex64>::identity(d, d) * Complex64::new(0.0, -0.5 * kf);
    Ok(h.with_matrix(h.matrix() + decay))
}

fn hermitize(op: &mut Operator) {
    let m = op.matrix();
    let sym = (m + m.adjoint()) * Complex64::from(0.5);
    *op = op.with_matrix(sym);
}
