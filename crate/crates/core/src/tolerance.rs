//! Numerical tolerances shared across the crate.

/// Every threshold used by validation checks and estimators lives here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max |A - A†| for operators flagged Hermitian.
    pub hermitian: f64,
    /// Max |ρ - ρ†| for density operators.
    pub density_hermitian: f64,
    /// Smallest eigenvalue allowed for a density operator.
    pub density_psd: f64,
    /// Deviation of the dipolar axis from unit length.
    pub unit_axis: f64,
    /// Pairs with p_i + p_j at or below this are skipped in the QFI sum.
    pub qfi_cutoff: f64,
    /// Max Hermiticity / trace defect of a finite-difference derivative.
    pub derivative_defect: f64,
    /// Ratios above 1 + this are reported as clamped.
    pub ratio_clamp: f64,
    /// |Φ_S + k_f ∫tr dt - 1| above this marks a run as non-conserving.
    pub conservation: f64,
    /// Relative disagreement between δθ and δθ/2 Fisher estimates.
    pub richardson: f64,
    /// Singlet probability closer than this to 0 or 1 is a boundary value.
    pub boundary_probability: f64,
    /// Slopes below this are treated as exactly zero.
    pub zero_slope: f64,
}

pub const TOL: Tolerances = Tolerances {
    hermitian: 1e-12,
    density_hermitian: 1e-10,
    density_psd: 1e-10,
    unit_axis: 1e-12,
    qfi_cutoff: 1e-12,
    derivative_defect: 1e-8,
    ratio_clamp: 1e-6,
    conservation: 1e-4,
    richardson: 1e-3,
    boundary_probability: 1e-12,
    zero_slope: 1e-12,
};
