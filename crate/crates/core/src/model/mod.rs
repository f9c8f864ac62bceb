//! Physical model of the radical pair: nuclei and hyperfine tensors, field
//! orientation, interradical geometry, reaction rates and the modulation of
//! the interradical distance.
//!
//! Internal units: time in µs, rates in µs⁻¹, angular frequencies in
//! rad·µs⁻¹, distances in Å, fields in µT. Hyperfine tensors are entered in
//! mT and converted with the free-electron gyromagnetic ratio.

pub(crate) mod config;
mod couplings;
mod hamiltonian;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::spin::{HilbertLayout, SpinMultiplicity};
use crate::tolerance::TOL;

pub use config::{DriveConfig, IntegratorSection, ModelConfig};
pub use couplings::{
    dipolar_constant, dipolar_coupling, distance_decay, exchange_coupling, radial_trajectory,
    recombination_rate,
};
pub use hamiltonian::{
    build_interaction_hamiltonian, build_static_hamiltonian, dipolar_form, effective_hamiltonian,
    exchange_form,
};

/// γ_e/2π of the free electron in MHz/mT.
pub const GAMMA_E_MHZ_PER_MT: f64 = -28.025;

/// Convert a coupling in mT to rad·µs⁻¹ using |γ_e|.
pub fn mt_to_angular(mt: f64) -> f64 {
    mt * 2.0 * PI * GAMMA_E_MHZ_PER_MT.abs()
}

/// Convert a frequency in MHz to rad·µs⁻¹.
pub fn mhz_to_angular(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

/// Convert an angular frequency in rad·µs⁻¹ to MHz.
pub fn angular_to_mhz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Electron-nuclear hyperfine tensor, stored in rad·µs⁻¹.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperfineTensor(Matrix3<f64>);

impl HyperfineTensor {
    /// From nine row-major entries in mT.
    pub fn from_mt(rows: [f64; 9]) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("hyperfine tensor has non-finite entries".into()));
        }
        Ok(Self(Matrix3::from_row_slice(&rows).map(mt_to_angular)))
    }

    /// Isotropic tensor a·I with `a` in mT.
    pub fn isotropic_mt(a: f64) -> Result<Self> {
        Self::from_mt([a, 0.0, 0.0, 0.0, a, 0.0, 0.0, 0.0, a])
    }

    pub fn from_angular(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("hyperfine tensor has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub fn angular(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Which radical a nucleus belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Radical {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nucleus {
    pub name: String,
    pub multiplicity: SpinMultiplicity,
    pub tensor: HyperfineTensor,
    pub radical: Radical,
}

/// Two electrons plus hyperfine-coupled nuclei.
///
/// Nuclei are kept in layout order: all nuclei of radical 1, then those of
/// radical 2, each group in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    nuclei: Vec<Nucleus>,
    /// γ_i/2π in MHz/mT for electron 1 and 2.
    electron_gyro: [f64; 2],
    layout: Arc<HilbertLayout>,
}

impl SpinSystem {
    pub fn new(nuclei: Vec<Nucleus>) -> Self {
        Self::with_gyro(nuclei, [GAMMA_E_MHZ_PER_MT; 2])
    }

    pub fn with_gyro(mut nuclei: Vec<Nucleus>, electron_gyro: [f64; 2]) -> Self {
        nuclei.sort_by_key(|n| n.radical == Radical::Two);
        let pick = |r: Radical| -> Vec<SpinMultiplicity> {
            nuclei
                .iter()
                .filter(|n| n.radical == r)
                .map(|n| n.multiplicity)
                .collect()
        };
        let layout = Arc::new(HilbertLayout::radical_pair(
            &pick(Radical::One),
            &pick(Radical::Two),
        ));
        Self {
            nuclei,
            electron_gyro,
            layout,
        }
    }

    /// No nuclei at all.
    pub fn bare() -> Self {
        Self::new(Vec::new())
    }

    pub fn nuclei(&self) -> &[Nucleus] {
        &self.nuclei
    }

    pub fn electron_gyro(&self) -> [f64; 2] {
        self.electron_gyro
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn nuclear_dim(&self) -> usize {
        self.layout.nuclear_dim()
    }
}

/// Magnetic field magnitude and direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSpec {
    pub b0_ut: f64,
    pub theta: f64,
    pub phi: f64,
}

impl FieldSpec {
    pub fn new(b0_ut: f64, theta: f64, phi: f64) -> Result<Self> {
        if !(b0_ut >= 0.0 && b0_ut.is_finite()) {
            return Err(Error::InvalidParameter(format!("field magnitude {b0_ut} µT")));
        }
        if !(0.0..=PI).contains(&theta) {
            return Err(Error::InvalidParameter(format!("polar angle {theta} outside [0, π]")));
        }
        if !(0.0..2.0 * PI).contains(&phi) {
            return Err(Error::InvalidParameter(format!("azimuth {phi} outside [0, 2π)")));
        }
        Ok(Self { b0_ut, theta, phi })
    }

    /// Unvalidated angles, for finite-difference stencils that step just
    /// outside the canonical range.
    pub(crate) fn stencil(b0_ut: f64, theta: f64, phi: f64) -> Self {
        Self { b0_ut, theta, phi }
    }

    pub fn direction(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Field vector in mT.
    pub fn vector_mt(&self) -> [f64; 3] {
        let b = self.b0_ut * 1e-3;
        self.direction().map(|c| c * b)
    }
}

/// Interradical geometry and electron-electron couplings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryCouplings {
    /// Reference interradical distance in Å.
    pub r0: f64,
    /// Unit vector along the interradical axis, molecular frame.
    pub axis: [f64; 3],
    /// Exchange amplitude J0 in rad·µs⁻¹.
    pub j0: f64,
    /// Distance decay constant in Å⁻¹.
    pub beta: f64,
    pub dipolar: bool,
    pub exchange: bool,
}

impl GeometryCouplings {
    pub const DEFAULT_R0: f64 = 17.2;
    pub const DEFAULT_BETA: f64 = 1.4;

    pub fn new(r0: f64, axis: [f64; 3], j0: f64, beta: f64, dipolar: bool, exchange: bool) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::InvalidParameter(format!("r0 = {r0} Å must be positive")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta = {beta} Å⁻¹ must be positive")));
        }
        let norm = axis.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > TOL.unit_axis {
            return Err(Error::InvalidParameter(format!("dipolar axis has norm {norm}, expected 1")));
        }
        if !j0.is_finite() {
            return Err(Error::InvalidParameter("non-finite J0".into()));
        }
        Ok(Self {
            r0,
            axis,
            j0,
            beta,
            dipolar,
            exchange,
        })
    }

    /// Defaults: r0 = 17.2 Å, axis ẑ, β = 1.4 Å⁻¹, both couplings on, J0 = 0.
    pub fn standard() -> Self {
        Self {
            r0: Self::DEFAULT_R0,
            axis: [0.0, 0.0, 1.0],
            j0: 0.0,
            beta: Self::DEFAULT_BETA,
            dipolar: true,
            exchange: true,
        }
    }

    /// Same geometry with J0 given as J0/2π in MHz.
    pub fn with_j0_mhz(mut self, j0_over_2pi: f64) -> Self {
        self.j0 = mhz_to_angular(j0_over_2pi);
        self
    }

    pub fn with_flags(mut self, dipolar: bool, exchange: bool) -> Self {
        self.dipolar = dipolar;
        self.exchange = exchange;
        self
    }

    /// Normalize an arbitrary non-zero axis.
    pub fn normalized_axis(v: [f64; 3]) -> Result<[f64; 3]> {
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter("dipolar axis must be non-zero".into()));
        }
        Ok(v.map(|c| c / n))
    }
}

/// Escape and recombination rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    /// Spin-independent escape rate k_f in µs⁻¹.
    pub kf: f64,
    /// Singlet recombination rate at r0, k_b0 in µs⁻¹.
    pub kb0: f64,
}

impl RateModel {
    pub fn new(kf: f64, kb0: f64) -> Result<Self> {
        if !(kf >= 0.0 && kb0 >= 0.0 && kf.is_finite() && kb0.is_finite()) {
            return Err(Error::InvalidParameter(format!("rates must be non-negative (kf={kf}, kb0={kb0})")));
        }
        if kf == 0.0 && kb0 == 0.0 {
            return Err(Error::InvalidParameter("kf and kb0 cannot both vanish".into()));
        }
        Ok(Self { kf, kb0 })
    }

    pub fn symmetric(k: f64) -> Result<Self> {
        Self::new(k, k)
    }
}

/// Piecewise-constant displacement sequence u_j (Å) on segments of fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    segment_us: f64,
    displacements: Vec<f64>,
    u_max: f64,
}

impl PiecewiseTrajectory {
    pub fn new(segment_us: f64, displacements: Vec<f64>, u_max: f64) -> Result<Self> {
        if !(segment_us > 0.0 && segment_us.is_finite()) {
            return Err(Error::InvalidParameter(format!("segment duration {segment_us} µs")));
        }
        if !(u_max > 0.0 && u_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("displacement bound {u_max} Å")));
        }
        if displacements.is_empty() {
            return Err(Error::InvalidParameter("empty control sequence".into()));
        }
        if let Some(bad) = displacements.iter().find(|u| !(0.0..=u_max).contains(*u)) {
            return Err(Error::InvalidParameter(format!(
                "displacement {bad} Å outside [0, {u_max}]"
            )));
        }
        Ok(Self {
            segment_us,
            displacements,
            u_max,
        })
    }

    pub fn segment_us(&self) -> f64 {
        self.segment_us
    }

    pub fn displacements(&self) -> &[f64] {
        &self.displacements
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn horizon_us(&self) -> f64 {
        self.segment_us * self.displacements.len() as f64
    }

    /// Displacement at time t; holds the final value past the horizon.
    pub fn displacement_at(&self, t: f64) -> f64 {
        let idx = (t / self.segment_us).floor().max(0.0) as usize;
        self.displacements[idx.min(self.displacements.len() - 1)]
    }
}

/// Interradical distance r(t).
#[derive(Debug, Clone, PartialEq)]
pub enum ModulationSpec {
    Static,
    /// r(t) = (Δ/2)(1 − cos 2πνt) + r0 with ν in MHz and Δ in Å.
    Harmonic { nu_mhz: f64, delta_a: f64 },
    Piecewise(PiecewiseTrajectory),
}

impl ModulationSpec {
    pub fn harmonic(nu_mhz: f64, delta_a: f64) -> Result<Self> {
        if !(nu_mhz > 0.0 && nu_mhz.is_finite()) {
            return Err(Error::InvalidParameter(format!("driving frequency {nu_mhz} MHz")));
        }
        if !(delta_a >= 0.0 && delta_a.is_finite()) {
            return Err(Error::InvalidParameter(format!("driving amplitude {delta_a} Å")));
        }
        Ok(Self::Harmonic { nu_mhz, delta_a })
    }

    pub fn is_static(&self) -> bool {
        matches!(self, Self::Static)
    }

    /// Highest frequency in the modulation (MHz), zero when static.
    pub fn frequency_mhz(&self) -> f64 {
        match self {
            Self::Static => 0.0,
            Self::Harmonic { nu_mhz, .. } => *nu_mhz,
            Self::Piecewise(_) => 0.0,
        }
    }
}

/// Complete radical-pair model, independent of field direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RadicalPairModel {
    pub system: SpinSystem,
    pub geometry: GeometryCouplings,
    pub rates: RateModel,
    /// Random-field relaxation rate γ in µs⁻¹.
    pub relaxation: f64,
    /// Field magnitude in µT.
    pub b0_ut: f64,
}

impl RadicalPairModel {
    pub fn new(
        system: SpinSystem,
        geometry: GeometryCouplings,
        rates: RateModel,
        relaxation: f64,
        b0_ut: f64,
    ) -> Result<Self> {
        if !(relaxation >= 0.0 && relaxation.is_finite()) {
            return Err(Error::InvalidParameter(format!("relaxation rate {relaxation}")));
        }
        if !(b0_ut >= 0.0 && b0_ut.is_finite()) {
            return Err(Error::InvalidParameter(format!("field magnitude {b0_ut} µT")));
        }
        Ok(Self {
            system,
            geometry,
            rates,
            relaxation,
            b0_ut,
        })
    }

    /// Validated field at the model's magnitude.
    pub fn field(&self, theta: f64, phi: f64) -> Result<FieldSpec> {
        FieldSpec::new(self.b0_ut, theta, phi)
    }

    pub fn with_j0_mhz(&self, j0_over_2pi: f64) -> Self {
        let mut m = self.clone();
        m.geometry = m.geometry.with_j0_mhz(j0_over_2pi);
        m
    }
}
