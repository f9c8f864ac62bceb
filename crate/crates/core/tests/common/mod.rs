//! Models and independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use radmag::model::{
    build_interaction_hamiltonian, build_static_hamiltonian, effective_hamiltonian, recombination_rate, FieldSpec,
    GeometryCouplings, HyperfineTensor, Nucleus, Radical, RadicalPairModel, RateModel, SpinSystem,
};
use radmag::spin::{electron_spins, singlet_projector, Operator, SpinMultiplicity};

pub type CMatrix = DMatrix<Complex64>;

/// Axial spin-1 nucleus on radical 1 (flavin-N5-like magnitude).
pub fn axial_nucleus() -> Nucleus {
    Nucleus {
        name: "N5".into(),
        multiplicity: SpinMultiplicity::ONE,
        tensor: HyperfineTensor::from_mt([-0.1, 0.0, 0.0, 0.0, -0.1, 0.0, 0.0, 0.0, 1.2]).unwrap(),
        radical: Radical::One,
    }
}

/// One-nucleus model with dipolar and exchange coupling, k_f = k_b = 1 µs⁻¹,
/// B0 = 50 µT.
pub fn one_nucleus_model(j0_mhz: f64) -> RadicalPairModel {
    RadicalPairModel::new(
        SpinSystem::new(vec![axial_nucleus()]),
        GeometryCouplings::standard().with_j0_mhz(j0_mhz),
        RateModel::new(1.0, 1.0).unwrap(),
        0.0,
        50.0,
    )
    .unwrap()
}

pub fn bare_model(kf: f64, kb: f64, dipolar: bool, exchange: bool, j0_mhz: f64) -> RadicalPairModel {
    RadicalPairModel::new(
        SpinSystem::bare(),
        GeometryCouplings::standard().with_flags(dipolar, exchange).with_j0_mhz(j0_mhz),
        RateModel::new(kf, kb).unwrap(),
        0.0,
        50.0,
    )
    .unwrap()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// vec(A X) = (I ⊗ A) vec(X), column stacking.
fn left(a: &CMatrix) -> CMatrix {
    DMatrix::identity(a.nrows(), a.nrows()).kronecker(a)
}

/// vec(X B) = (Bᵀ ⊗ I) vec(X).
fn right(b: &CMatrix) -> CMatrix {
    b.transpose().kronecker(&DMatrix::identity(b.nrows(), b.nrows()))
}

/// Dense d²×d² generator of the master equation at fixed distance r.
pub fn liouvillian(model: &RadicalPairModel, field: &FieldSpec, r: f64) -> CMatrix {
    let sys = &model.system;
    let layout = sys.layout();
    let h = build_static_hamiltonian(sys, field).unwrap().into_matrix()
        + build_interaction_hamiltonian(sys, &model.geometry, r).unwrap().into_matrix();
    let kb = recombination_rate(model.rates.kb0, model.geometry.beta, r, model.geometry.r0).unwrap();
    let heff = effective_hamiltonian(&Operator::new(h, layout.clone()).unwrap(), kb, model.rates.kf)
        .unwrap()
        .into_matrix();
    let i = Complex64::i();
    let mut l = left(&heff) * (-i) + right(&heff.adjoint()) * i;
    if model.relaxation > 0.0 {
        let (s1, s2) = electron_spins(layout).unwrap();
        for s in s1.components().into_iter().chain(s2.components()) {
            let m = s.matrix();
            let sq = m * m;
            l += (left(m) * right(m) - (left(&sq) + right(&sq)) * Complex64::from(0.5))
                * Complex64::from(model.relaxation);
        }
    }
    l
}

/// Normalized ∫ρ dt of a static model from the resolvent: solve L vec(R) = −vec(ρ0).
pub fn resolvent_steady_state(model: &RadicalPairModel, field: &FieldSpec) -> CMatrix {
    let d = model.system.dim();
    let z = model.system.nuclear_dim() as f64;
    let ps = singlet_projector(model.system.layout()).unwrap().into_matrix();
    let rho0 = DVector::from_column_slice((ps / Complex64::from(z)).as_slice());
    let l = liouvillian(model, field, model.geometry.r0);
    let r = l.lu().solve(&(-rho0)).unwrap();
    let r = DMatrix::from_column_slice(d, d, r.as_slice());
    let tr = r.trace().re;
    r / Complex64::from(tr)
}

/// Unnormalized Tr[P_S ρ(t)] for a static model with k_b = 0, by exact
/// diagonalization: e^{−k_f t}/Z Σ_ab |⟨a|P_S|b⟩|² cos((E_a − E_b) t).
pub fn exact_singlet_probability(model: &RadicalPairModel, field: &FieldSpec, times: &[f64]) -> Vec<f64> {
    let sys = &model.system;
    let h = build_static_hamiltonian(sys, field).unwrap().into_matrix()
        + build_interaction_hamiltonian(sys, &model.geometry, model.geometry.r0)
            .unwrap()
            .into_matrix();
    let eig = h.symmetric_eigen();
    let ps = singlet_projector(sys.layout()).unwrap().into_matrix();
    let v = &eig.eigenvectors;
    let ps_eig = v.adjoint() * &ps * v;
    let z = sys.nuclear_dim() as f64;
    let n = eig.eigenvalues.len();
    times
        .iter()
        .map(|&t| {
            let mut p = 0.0;
            for a in 0..n {
                for b in 0..n {
                    p += ps_eig[(a, b)].norm_sqr() * ((eig.eigenvalues[a] - eig.eigenvalues[b]) * t).cos();
                }
            }
            p * (-model.rates.kf * t).exp() / z
        })
        .collect()
}

/// QFI from the symmetric logarithmic derivative solved as a Lyapunov
/// equation: σL + Lσ = 2∂σ, 𝓕 = Tr[∂σ L]. The system is solved by least
/// squares (SVD) so rank-deficient σ is handled.
pub fn sld_qfi(sigma: &CMatrix, d_sigma: &CMatrix) -> f64 {
    let d = sigma.nrows();
    let id = CMatrix::identity(d, d);
    let a = id.kronecker(sigma) + sigma.transpose().kronecker(&id);
    let b = DVector::from_column_slice((d_sigma * Complex64::from(2.0)).as_slice());
    let l = a.svd(true, true).solve(&b, 1e-12).unwrap();
    let l = DMatrix::from_column_slice(d, d, l.as_slice());
    (d_sigma * l).trace().re
}
