//! Fisher information of the steady-state probe, the quantum Cramér–Rao
//! ratio, yield anisotropy and angular-precision estimates.
//!
//! The probe is the normalized time-integrated state σ_ss(θ, φ). The
//! measurement is the two-outcome singlet/triplet projection, with singlet
//! probability Θ_S = Tr[P_S σ_ss]. Derivatives with respect to the polar
//! field angle θ are central differences; the classical information uses
//! the same stencil as the quantum one, so F_θ ≤ 𝓕_θ holds up to rounding.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{conditional_singlet_probability, propagate, IntegratorConfig};
use crate::error::{Error, Result};
use crate::model::{FieldSpec, ModulationSpec, RadicalPairModel};
use crate::spin::max_abs;
use crate::tolerance::TOL;

/// Field orientations (θ, φ) in radians, in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationGrid {
    points: Vec<(f64, f64)>,
}

impl OrientationGrid {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("orientation grid is empty".into()));
        }
        for &(theta, phi) in &points {
            if !(0.0..=PI).contains(&theta) || !(0.0..2.0 * PI).contains(&phi) {
                return Err(Error::InvalidParameter(format!(
                    "orientation ({theta}, {phi}) outside [0, π] × [0, 2π)"
                )));
            }
        }
        Ok(Self { points })
    }

    /// n_θ × n_φ points over [0, π] × [0, π], endpoints included, θ-major.
    /// A count of one places the single value at 0.
    pub fn uniform(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::InvalidParameter("orientation grid counts must be positive".into()));
        }
        let thetas = inclusive(n_theta);
        let phis = inclusive(n_phi);
        // φ = π is a valid azimuth but outside the half-open validation range
        // only when it rounds above; clamp defensively.
        let points = thetas
            .iter()
            .flat_map(|&t| phis.iter().map(move |&p| (t, p.min(PI))))
            .collect();
        Self::new(points)
    }

    /// n_θ polar angles over [0, π] at fixed azimuth.
    pub fn theta_only(n_theta: usize, phi: f64) -> Result<Self> {
        if n_theta == 0 {
            return Err(Error::InvalidParameter("orientation grid counts must be positive".into()));
        }
        Self::new(inclusive(n_theta).into_iter().map(|t| (t, phi)).collect())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn inclusive(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| PI * i as f64 / (n - 1) as f64).collect()
}

/// Classical Fisher information of the singlet/triplet measurement from Θ_S
/// and its slope: (∂Θ)² / (Θ(1 − Θ)).
///
/// At Θ ∈ {0, 1} the information is zero when the slope vanishes and
/// undefined otherwise.
pub fn cfi_from_slope(theta_s: f64, slope: f64) -> Result<f64> {
    let var = theta_s * (1.0 - theta_s);
    if var <= TOL.boundary_probability {
        if slope.abs() <= TOL.zero_slope {
            return Ok(0.0);
        }
        return Err(Error::DegenerateStatistics(theta_s));
    }
    Ok(slope * slope / var)
}

/// Central-difference CFI with a Richardson halving check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfiEstimate {
    /// F_θ from the δθ stencil.
    pub value: f64,
    /// F_θ from the δθ/2 stencil.
    pub refined: f64,
    pub theta_s: f64,
    pub slope: f64,
    /// The two stencils agree to the Richardson tolerance.
    pub converged: bool,
}

/// F_θ for a probe θ ↦ Θ_S(θ), stencil half-width `delta`.
pub fn cfi<F>(mut probe: F, theta: f64, delta: f64) -> Result<CfiEstimate>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("derivative step {delta}")));
    }
    let theta_s = probe(theta)?;
    let slope = (probe(theta + delta)? - probe(theta - delta)?) / (2.0 * delta);
    let slope_half = (probe(theta + 0.5 * delta)? - probe(theta - 0.5 * delta)?) / delta;
    let value = cfi_from_slope(theta_s, slope)?;
    let refined = cfi_from_slope(theta_s, slope_half)?;
    Ok(CfiEstimate {
        value,
        refined,
        theta_s,
        slope,
        converged: richardson_agrees(value, refined),
    })
}

fn richardson_agrees(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale <= TOL.zero_slope || (a - b).abs() <= TOL.richardson * scale
}

/// Quantum Fisher information 2 Σ |⟨i|∂σ|j⟩|² / (p_i + p_j) over eigenpairs
/// of σ with p_i + p_j above `cutoff`.
pub fn qfi(sigma: &DMatrix<Complex64>, d_sigma: &DMatrix<Complex64>, cutoff: f64) -> Result<f64> {
    let d = sigma.nrows();
    if sigma.ncols() != d || d_sigma.nrows() != d || d_sigma.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: d_sigma.nrows(),
        });
    }
    let scale = max_abs(d_sigma).max(1.0);
    let defect = (max_abs(&(d_sigma - d_sigma.adjoint())) / scale).max(d_sigma.trace().norm() / scale);
    if defect > TOL.derivative_defect {
        return Err(Error::NumericalDerivative(defect));
    }
    let eig = sigma.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let rotated = v.adjoint() * d_sigma * v;
    let mut f = 0.0;
    for i in 0..d {
        for j in 0..d {
            let s = eig.eigenvalues[i] + eig.eigenvalues[j];
            if s > cutoff {
                f += 2.0 * rotated[(i, j)].norm_sqr() / s;
            }
        }
    }
    Ok(f)
}

/// F_θ / 𝓕_θ, clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcrbRatio {
    pub value: f64,
    /// The raw ratio exceeded 1 by more than the clamp tolerance, a sign of
    /// derivative noise.
    pub clamped: bool,
}

pub fn qcrb_ratio(cfi: f64, qfi: f64) -> Result<QcrbRatio> {
    if !(qfi > TOL.qfi_cutoff) {
        return Err(Error::UndefinedRatio(qfi));
    }
    let raw = cfi / qfi;
    Ok(QcrbRatio {
        value: raw.clamp(0.0, 1.0),
        clamped: raw > 1.0 + TOL.ratio_clamp,
    })
}

/// Relative anisotropy of yields over a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anisotropy {
    /// Γ = (Φ_max − Φ_min) / Φ̄.
    pub gamma: f64,
    pub argmax: usize,
    pub argmin: usize,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
}

/// Γ over `yields`; ties resolve to the first index.
pub fn anisotropy(yields: &[f64]) -> Result<Anisotropy> {
    if yields.len() < 2 {
        return Err(Error::Anisotropy(format!("need at least 2 yields, got {}", yields.len())));
    }
    let (mut argmax, mut argmin) = (0, 0);
    for (i, &y) in yields.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::Anisotropy(format!("yield {i} is not finite")));
        }
        if y > yields[argmax] {
            argmax = i;
        }
        if y < yields[argmin] {
            argmin = i;
        }
    }
    let mean = yields.iter().sum::<f64>() / yields.len() as f64;
    if mean <= 0.0 {
        return Err(Error::Anisotropy(format!("mean yield {mean} is not positive")));
    }
    let (max, min) = (yields[argmax], yields[argmin]);
    Ok(Anisotropy {
        gamma: (max - min) / mean,
        argmax,
        argmin,
        max,
        min,
        mean,
    })
}

/// Δθ in degrees from the Cramér–Rao bound with N independent receptors:
/// (180/π) / √(N·F_θ).
pub fn angular_precision(cfi: f64, receptors: f64) -> Result<f64> {
    if !(receptors >= 1.0 && receptors.is_finite()) {
        return Err(Error::InvalidParameter(format!("receptor count {receptors}")));
    }
    if !(cfi > 0.0 && cfi.is_finite()) {
        return Err(Error::InfinitePrecision(cfi));
    }
    Ok((180.0 / PI) / (receptors * cfi).sqrt())
}

/// Stencil and cutoff settings for a report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetrologySettings {
    /// Half-width δθ of the central difference, rad.
    pub delta: f64,
    pub qfi_cutoff: f64,
    /// Receptor counts N for the Δθ estimates.
    pub receptors: Vec<f64>,
    pub integrator: IntegratorConfig,
}

impl Default for MetrologySettings {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            qfi_cutoff: TOL.qfi_cutoff,
            receptors: vec![2e5, 2e6],
            integrator: IntegratorConfig::default().without_series(),
        }
    }
}

/// Quality flags of one orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PointFlags {
    /// δθ and δθ/2 Fisher estimates disagree.
    pub non_converged: bool,
    /// The QCRB ratio was clamped to 1.
    pub clamped: bool,
    /// Some propagation violated probability conservation.
    pub non_conserving: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationResult {
    pub theta: f64,
    pub phi: f64,
    pub singlet_yield: f64,
    /// Θ_S.
    pub singlet_probability: f64,
    /// F_θ.
    pub cfi: f64,
    /// 𝓕_θ.
    pub qfi: f64,
    /// None where 𝓕_θ vanishes.
    pub ratio: Option<f64>,
    pub flags: PointFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetrologyReport {
    pub points: Vec<OrientationResult>,
    /// Yield anisotropy over the grid; None for single-point grids.
    pub anisotropy: Option<Anisotropy>,
    /// Largest defined ratio over the grid and its index.
    pub max_ratio: Option<(f64, usize)>,
    /// Mean of the defined ratios.
    pub mean_ratio: Option<f64>,
    /// Largest F_θ over the grid.
    pub max_cfi: f64,
    /// Largest 𝓕_θ over the grid.
    pub max_qfi: f64,
    /// (N, Δθ in degrees) at the grid's best F_θ; infinite when F_θ = 0.
    pub precision: Vec<(f64, f64)>,
}

impl MetrologyReport {
    pub fn from_points(points: Vec<OrientationResult>, receptors: &[f64]) -> Result<Self> {
        let yields: Vec<f64> = points.iter().map(|p| p.singlet_yield).collect();
        let anisotropy = if yields.len() >= 2 {
            Some(anisotropy(&yields)?)
        } else {
            None
        };
        let mut max_ratio: Option<(f64, usize)> = None;
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, p) in points.iter().enumerate() {
            if let Some(r) = p.ratio {
                if max_ratio.map_or(true, |(m, _)| r > m) {
                    max_ratio = Some((r, i));
                }
                sum += r;
                count += 1;
            }
        }
        let max_cfi = points.iter().map(|p| p.cfi).fold(0.0, f64::max);
        let max_qfi = points.iter().map(|p| p.qfi).fold(0.0, f64::max);
        let precision = receptors
            .iter()
            .map(|&n| match angular_precision(max_cfi, n) {
                Ok(dt) => Ok((n, dt)),
                Err(Error::InfinitePrecision(_)) => Ok((n, f64::INFINITY)),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            points,
            anisotropy,
            max_ratio,
            mean_ratio: (count > 0).then(|| sum / count as f64),
            max_cfi,
            max_qfi,
            precision,
        })
    }
}

/// Steady-state probe of one model under one modulation.
#[derive(Debug, Clone)]
pub struct Probe<'a> {
    pub model: &'a RadicalPairModel,
    pub modulation: &'a ModulationSpec,
    pub integrator: &'a IntegratorConfig,
}

/// One propagation summarized for estimation.
#[derive(Debug, Clone)]
pub struct ProbeSample {
    pub sigma: DMatrix<Complex64>,
    pub singlet_probability: f64,
    pub singlet_yield: f64,
    pub conserving: bool,
}

impl Probe<'_> {
    /// σ_ss at (θ, φ). θ may step slightly outside [0, π] for stencils.
    pub fn sample(&self, theta: f64, phi: f64) -> Result<ProbeSample> {
        let field = FieldSpec::stencil(self.model.b0_ut, theta, phi);
        let res = propagate(self.model, &field, self.modulation, self.integrator)?;
        let sigma = res.steady_state()?;
        Ok(ProbeSample {
            singlet_probability: conditional_singlet_probability(&sigma)?,
            sigma: sigma.matrix().clone(),
            singlet_yield: res.singlet_yield,
            conserving: res.conserves_probability(),
        })
    }

    /// Θ_S, F_θ, 𝓕_θ and the ratio at one orientation.
    pub fn evaluate(&self, theta: f64, phi: f64, delta: f64, cutoff: f64) -> Result<OrientationResult> {
        let center = self.sample(theta, phi)?;
        let plus = self.sample(theta + delta, phi)?;
        let minus = self.sample(theta - delta, phi)?;
        let plus_half = self.sample(theta + 0.5 * delta, phi)?;
        let minus_half = self.sample(theta - 0.5 * delta, phi)?;

        let mut d_sigma = (&plus.sigma - &minus.sigma) / Complex64::from(2.0 * delta);
        d_sigma = (&d_sigma + d_sigma.adjoint()) * Complex64::from(0.5);
        let slope = (plus.singlet_probability - minus.singlet_probability) / (2.0 * delta);
        let slope_half = (plus_half.singlet_probability - minus_half.singlet_probability) / delta;
        let theta_s = center.singlet_probability;
        let f = cfi_from_slope(theta_s, slope)?;
        let f_half = cfi_from_slope(theta_s, slope_half)?;
        let qf = qfi(&center.sigma, &d_sigma, cutoff)?;

        let mut flags = PointFlags {
            non_converged: !richardson_agrees(f, f_half),
            clamped: false,
            non_conserving: ![&center, &plus, &minus, &plus_half, &minus_half]
                .iter()
                .all(|s| s.conserving),
        };
        let ratio = match qcrb_ratio(f, qf) {
            Ok(r) => {
                flags.clamped = r.clamped;
                Some(r.value)
            }
            Err(Error::UndefinedRatio(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(OrientationResult {
            theta,
            phi,
            singlet_yield: center.singlet_yield,
            singlet_probability: theta_s,
            cfi: f,
            qfi: qf,
            ratio,
            flags,
        })
    }
}

/// Full report over a grid. Orientations are evaluated in parallel; the
/// result does not depend on the thread count.
pub fn evaluate(
    model: &RadicalPairModel,
    modulation: &ModulationSpec,
    grid: &OrientationGrid,
    settings: &MetrologySettings,
) -> Result<MetrologyReport> {
    let probe = Probe {
        model,
        modulation,
        integrator: &settings.integrator,
    };
    let points = grid
        .points()
        .par_iter()
        .map(|&(theta, phi)| probe.evaluate(theta, phi, settings.delta, settings.qfi_cutoff))
        .collect::<Result<Vec<_>>>()?;
    MetrologyReport::from_points(points, &settings.receptors)
}
