use std::f64::consts::PI;

use super::{GeometryCouplings, ModulationSpec};
use crate::error::{Error, Result};

const MU0_OVER_4PI: f64 = 1.000_000_000_55e-7; // T·m/A
const G_E: f64 = 2.002_319_304_362_56;
const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24; // J/T
const HBAR: f64 = 1.054_571_817e-34; // J·s

/// µ0 g_e² µ_B² / (4π ħ) in rad·µs⁻¹·Å³.
pub fn dipolar_constant() -> f64 {
    let si = MU0_OVER_4PI * (G_E * BOHR_MAGNETON).powi(2) / HBAR; // rad·s⁻¹·m³
    si * 1e30 * 1e-6
}

/// Point-dipole coupling d(r) = µ0 g_e² µ_B² / (4π r³) in rad·µs⁻¹.
pub fn dipolar_coupling(r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("interradical distance {r} Å must be positive")));
    }
    Ok(dipolar_constant() / (r * r * r))
}

/// exp[−β(r − r0)], the kernel shared by exchange and recombination.
pub fn distance_decay(beta: f64, r: f64, r0: f64) -> f64 {
    (-beta * (r - r0)).exp()
}

/// J(r) = J0 exp[−β(r − r0)].
pub fn exchange_coupling(j0: f64, beta: f64, r: f64, r0: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("interradical distance {r} Å must be positive")));
    }
    Ok(j0 * distance_decay(beta, r, r0))
}

/// k_b(r) = k_b0 exp[−β(r − r0)].
pub fn recombination_rate(kb0: f64, beta: f64, r: f64, r0: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("interradical distance {r} Å must be positive")));
    }
    if kb0 < 0.0 {
        return Err(Error::InvalidParameter(format!("recombination rate {kb0} is negative")));
    }
    Ok(kb0 * distance_decay(beta, r, r0))
}

/// Interradical distance at time `t` (µs).
pub fn radial_trajectory(spec: &ModulationSpec, geometry: &GeometryCouplings, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    Ok(match spec {
        ModulationSpec::Static => geometry.r0,
        ModulationSpec::Harmonic { nu_mhz, delta_a } => {
            0.5 * delta_a * (1.0 - (2.0 * PI * nu_mhz * t).cos()) + geometry.r0
        }
        ModulationSpec::Piecewise(p) => geometry.r0 + p.displacement_at(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{angular_to_mhz, mhz_to_angular, PiecewiseTrajectory};
    use proptest::prelude::*;

    fn geometry() -> GeometryCouplings {
        GeometryCouplings::standard()
    }

    #[test]
    fn harmonic_endpoints() {
        let g = geometry();
        let spec = ModulationSpec::harmonic(2.0, 3.0).unwrap();
        assert_eq!(radial_trajectory(&spec, &g, 0.0).unwrap(), 17.2);
        let top = radial_trajectory(&spec, &g, 1.0 / (2.0 * 2.0)).unwrap();
        assert!((top - 20.2).abs() < 1e-12);
    }

    #[test]
    fn harmonic_quarter_period_value() {
        // (3/2)(1 - cos(π/2)) + 17.2 = 18.7
        let spec = ModulationSpec::harmonic(1.0, 3.0).unwrap();
        let r = radial_trajectory(&spec, &geometry(), 0.25).unwrap();
        assert!((r - 18.7).abs() < 1e-12);
    }

    #[test]
    fn static_and_piecewise_trajectories() {
        let g = geometry();
        assert_eq!(radial_trajectory(&ModulationSpec::Static, &g, 5.0).unwrap(), 17.2);
        let p = PiecewiseTrajectory::new(0.5, vec![1.0, 2.0], 3.0).unwrap();
        let spec = ModulationSpec::Piecewise(p);
        assert_eq!(radial_trajectory(&spec, &g, 0.7).unwrap(), 19.2);
        assert_eq!(radial_trajectory(&spec, &g, 100.0).unwrap(), 19.2);
        assert!(matches!(radial_trajectory(&spec, &g, -1.0), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn dipolar_cubic_scaling_and_sign() {
        let d1 = dipolar_coupling(17.2).unwrap();
        let d2 = dipolar_coupling(34.4).unwrap();
        assert!(d1 > 0.0);
        assert!((d2 / d1 - 0.125).abs() < 1e-15);
        assert!(dipolar_coupling(0.0).is_err());
    }

    #[test]
    fn dipolar_matches_field_of_a_point_dipole() {
        // Independent route: dipole field µ0 g µ_B / (4π r³) in mT, converted to
        // a precession frequency with γ_e/2π = 28.025 MHz/mT.
        let r = 17.2_f64;
        let moment = 1e-7 * 2.0023193 * 9.2740101e-24; // T·m³
        let field_mt = moment / (r * 1e-10).powi(3) * 1e3;
        let oracle_mhz = field_mt * 28.025;
        let ours_mhz = angular_to_mhz(dipolar_coupling(r).unwrap());
        assert!(((ours_mhz - oracle_mhz) / oracle_mhz).abs() < 5e-4, "{ours_mhz} vs {oracle_mhz}");
        // 52.04 MHz·nm³ is the tabulated electron-electron point-dipole constant.
        assert!((angular_to_mhz(dipolar_constant()) * 1e-3 - 52.04).abs() < 0.005);
    }

    #[test]
    fn exchange_values() {
        let j0 = mhz_to_angular(50.0);
        assert_eq!(exchange_coupling(j0, 1.4, 17.2, 17.2).unwrap(), j0);
        let half = exchange_coupling(j0, 1.4, 17.2 + 2f64.ln() / 1.4, 17.2).unwrap();
        assert!((half - j0 / 2.0).abs() < 1e-12);
        let j = angular_to_mhz(exchange_coupling(j0, 1.4, 20.2, 17.2).unwrap());
        // 50 e^{-4.2}
        assert!((j - 0.7498).abs() < 5e-5, "{j}");
    }

    #[test]
    fn recombination_values() {
        assert_eq!(recombination_rate(1.0, 1.4, 17.2, 17.2).unwrap(), 1.0);
        assert_eq!(recombination_rate(0.0, 1.4, 25.0, 17.2).unwrap(), 0.0);
        let k = recombination_rate(1.0, 1.4, 20.2, 17.2).unwrap();
        assert!((k - 0.0150).abs() < 5e-5, "{k}");
        assert!(recombination_rate(-1.0, 1.4, 20.2, 17.2).is_err());
    }

    proptest! {
        #[test]
        fn harmonic_is_bounded_and_periodic(nu in 0.01f64..100.0, delta in 0.0f64..5.0, t in 0.0f64..20.0) {
            let g = geometry();
            let spec = ModulationSpec::harmonic(nu, delta).unwrap();
            let r = radial_trajectory(&spec, &g, t).unwrap();
            prop_assert!(r >= g.r0 - 1e-12 && r <= g.r0 + delta + 1e-12);
            let r_next = radial_trajectory(&spec, &g, t + 1.0 / nu).unwrap();
            prop_assert!((r_next - r).abs() < 1e-9 * (1.0 + nu * t));
        }

        #[test]
        fn exchange_and_recombination_share_kernel(pref in 0.0f64..10.0, r in 10.0f64..30.0) {
            let j = exchange_coupling(pref, 1.4, r, 17.2).unwrap();
            let k = recombination_rate(pref, 1.4, r, 17.2).unwrap();
            prop_assert_eq!(j, k);
        }

        #[test]
        fn exchange_bounded_beyond_r0(j0 in -700.0f64..700.0, dr in 0.0f64..10.0) {
            let j = exchange_coupling(j0, 1.4, 17.2 + dr, 17.2).unwrap();
            prop_assert!(j.abs() <= j0.abs());
            prop_assert!(j == 0.0 || j.signum() == j0.signum());
        }
    }
}
