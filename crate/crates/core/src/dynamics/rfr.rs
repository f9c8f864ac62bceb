//! Random-field relaxation: isotropic white-noise dephasing of each electron.
//!
//! For a spin-1/2 the Lindblad form Σ_k (S_k ρ S_k − ½{S_k², ρ}) collapses to
//! Dep(ρ) − ρ, where Dep replaces the electron's state by I/2 ⊗ Tr_e ρ. The
//! propagator therefore has the closed form
//! exp(x D_i) = e^{−x} id + (1 − e^{−x}) Dep_i, and the two electrons commute.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::spin::{electron_spins, HilbertLayout};

/// Literal Lindblad form of the relaxation superoperator.
#[derive(Debug, Clone)]
pub struct RfrDissipator {
    gamma: f64,
    jumps: Vec<DMatrix<Complex64>>,
    anticomm: DMatrix<Complex64>,
}

/// Build γ·Σ_{i,k}(S_{i,k} ρ S_{i,k} − ½{S_{i,k}², ρ}) on `layout`.
pub fn rfr_dissipator(gamma: f64, layout: &Arc<HilbertLayout>) -> Result<RfrDissipator> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("relaxation rate {gamma} must be non-negative")));
    }
    let (s1, s2) = electron_spins(layout)?;
    let jumps: Vec<_> = s1
        .components()
        .into_iter()
        .chain(s2.components())
        .map(|op| op.matrix().clone())
        .collect();
    let d = layout.dim();
    let mut anticomm = DMatrix::zeros(d, d);
    for j in &jumps {
        anticomm += j * j;
    }
    Ok(RfrDissipator {
        gamma,
        jumps,
        anticomm,
    })
}

impl RfrDissipator {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn apply(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut out = (&self.anticomm * rho + rho * &self.anticomm) * Complex64::from(-0.5);
        for j in &self.jumps {
            out += j * rho * j;
        }
        out * Complex64::from(self.gamma)
    }
}

/// `out = D(x)` with D = Σ_i (Dep_i − id), unscaled by γ. `z` is the
/// nuclear dimension; the layout is electron 1, electron 2, nuclei.
pub(crate) fn dissipator_into(x: &CMat, z: usize, out: &mut CMat) {
    let d = 4 * z;
    let (ore, oim) = out.parts_mut();
    let (xre, xim) = (x.re(), x.im());
    let b = 2 * z;
    for j in 0..d {
        for i in 0..d {
            let k = j * d + i;
            let mut r = -2.0 * xre[k];
            let mut m = -2.0 * xim[k];
            // Dep on electron 1: diagonal blocks get the block average.
            let (ai, aj) = (i / b, j / b);
            if ai == aj {
                let k2 = (j % b + (1 - aj) * b) * d + (i % b + (1 - ai) * b);
                r += 0.5 * (xre[k] + xre[k2]);
                m += 0.5 * (xim[k] + xim[k2]);
            }
            // Dep on electron 2.
            let (ci, cj) = ((i / z) % 2, (j / z) % 2);
            if ci == cj {
                let i2 = if ci == 0 { i + z } else { i - z };
                let j2 = if cj == 0 { j + z } else { j - z };
                let k2 = j2 * d + i2;
                r += 0.5 * (xre[k] + xre[k2]);
                m += 0.5 * (xim[k] + xim[k2]);
            }
            ore[k] = r;
            oim[k] = m;
        }
    }
}

/// Apply exp(x D) in place.
pub(crate) fn relax_in_place(rho: &mut CMat, z: usize, x: f64) {
    if x == 0.0 {
        return;
    }
    let keep = (-x).exp();
    let mix = 0.5 * (1.0 - keep);
    relax_mix(rho, z, keep, mix);
}

/// For each electron in turn: X ← keep·X + mix·(pair sum) on the diagonal
/// blocks of that electron, keep·X off the diagonal.
fn relax_mix(rho: &mut CMat, z: usize, keep: f64, mix: f64) {
    let d = 4 * z;
    let (re, im) = rho.parts_mut();
    // Electron 1: blocks of size 2z.
    let b = 2 * z;
    for j in 0..b {
        for i in 0..b {
            let k0 = j * d + i; // (0,0) block
            let k1 = (j + b) * d + (i + b); // (1,1) block
            let (r0, r1) = (re[k0], re[k1]);
            let (m0, m1) = (im[k0], im[k1]);
            re[k0] = keep * r0 + mix * (r0 + r1);
            re[k1] = keep * r1 + mix * (r0 + r1);
            im[k0] = keep * m0 + mix * (m0 + m1);
            im[k1] = keep * m1 + mix * (m0 + m1);
            let k01 = (j + b) * d + i;
            let k10 = j * d + (i + b);
            re[k01] *= keep;
            im[k01] *= keep;
            re[k10] *= keep;
            im[k10] *= keep;
        }
    }
    // Electron 2: inside every electron-1 block, sub-blocks of size z.
    for a in 0..2 {
        for bb in 0..2 {
            let (ro, co) = (a * b, bb * b);
            for j in 0..z {
                for i in 0..z {
                    let k0 = (co + j) * d + (ro + i);
                    let k1 = (co + z + j) * d + (ro + z + i);
                    let (r0, r1) = (re[k0], re[k1]);
                    let (m0, m1) = (im[k0], im[k1]);
                    re[k0] = keep * r0 + mix * (r0 + r1);
                    re[k1] = keep * r1 + mix * (r0 + r1);
                    im[k0] = keep * m0 + mix * (m0 + m1);
                    im[k1] = keep * m1 + mix * (m0 + m1);
                    let k01 = (co + z + j) * d + (ro + i);
                    let k10 = (co + j) * d + (ro + z + i);
                    re[k01] *= keep;
                    im[k01] *= keep;
                    re[k10] *= keep;
                    im[k10] *= keep;
                }
            }
        }
    }
}
