//! TOML model configuration.
//!
//! ```toml
//! [field]
//! B0_uT = 50.0
//!
//! [[radicals]]            # radical 1
//! nuclei = [{ name = "N5", multiplicity = 3, tensor_mT = [ ... 9 numbers ... ] }]
//!
//! [[radicals]]            # radical 2
//! nuclei = []
//!
//! [geometry]
//! r0_A = 17.2
//! axis = [0.0, 0.0, 1.0]
//!
//! [couplings]
//! J0_over_2pi_MHz = 0.0
//! beta_per_A = 1.4
//! dipolar = true
//! exchange = true
//!
//! [rates]
//! kf_per_us = 1.0
//! kb0_per_us = 1.0
//!
//! [relaxation]
//! gamma_per_us = 0.0
//! ```
//!
//! Optional sections: `[electrons] gyro_MHz_per_mT = [g1, g2]`,
//! `[drive] nu_MHz, delta_A` and `[integrator] dt_us, t_max_us, epsilon, scheme`.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    GeometryCouplings, HyperfineTensor, ModulationSpec, Nucleus, Radical, RadicalPairModel, RateModel,
    SpinSystem, GAMMA_E_MHZ_PER_MT,
};
use crate::error::{Error, Result};
use crate::spin::SpinMultiplicity;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub field: FieldSection,
    #[serde(default)]
    pub radicals: Vec<RadicalSection>,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub couplings: CouplingsSection,
    pub rates: RatesSection,
    #[serde(default)]
    pub relaxation: RelaxationSection,
    #[serde(default)]
    pub electrons: Option<ElectronsSection>,
    #[serde(default)]
    pub drive: Option<DriveConfig>,
    #[serde(default)]
    pub integrator: Option<IntegratorSection>,
    #[serde(skip)]
    source_hash: String,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(rename = "B0_uT")]
    pub b0_ut: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RadicalSection {
    #[serde(default)]
    pub nuclei: Vec<NucleusSection>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NucleusSection {
    pub name: String,
    pub multiplicity: usize,
    #[serde(rename = "tensor_mT")]
    pub tensor_mt: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(rename = "r0_A", default = "default_r0")]
    pub r0_a: f64,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            r0_a: default_r0(),
            axis: default_axis(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CouplingsSection {
    #[serde(rename = "J0_over_2pi_MHz", default)]
    pub j0_over_2pi_mhz: f64,
    #[serde(rename = "beta_per_A", default = "default_beta")]
    pub beta_per_a: f64,
    #[serde(default = "yes")]
    pub dipolar: bool,
    #[serde(default = "yes")]
    pub exchange: bool,
}

impl Default for CouplingsSection {
    fn default() -> Self {
        Self {
            j0_over_2pi_mhz: 0.0,
            beta_per_a: default_beta(),
            dipolar: true,
            exchange: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub kf_per_us: f64,
    pub kb0_per_us: f64,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RelaxationSection {
    #[serde(default)]
    pub gamma_per_us: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ElectronsSection {
    #[serde(rename = "gyro_MHz_per_mT")]
    pub gyro_mhz_per_mt: [f64; 2],
}

/// Harmonic driving of the interradical distance.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    #[serde(rename = "nu_MHz")]
    pub nu_mhz: f64,
    #[serde(rename = "delta_A", default = "default_delta")]
    pub delta_a: f64,
}

/// Integrator overrides; absent fields fall back to the run defaults.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt_us: Option<f64>,
    pub t_max_us: Option<f64>,
    pub epsilon: Option<f64>,
    /// "exponential" or "rk4".
    pub scheme: Option<String>,
}

fn default_r0() -> f64 {
    GeometryCouplings::DEFAULT_R0
}
fn default_beta() -> f64 {
    GeometryCouplings::DEFAULT_BETA
}
fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_delta() -> f64 {
    3.0
}
fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::ModelConfig(e.to_string()))?;
        cfg.source_hash = hex_digest(text.as_bytes());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ModelConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// SHA-256 of the source text, lowercase hex.
    pub fn hash(&self) -> &str {
        &self.source_hash
    }

    fn validate(&self) -> Result<()> {
        if self.radicals.len() > 2 {
            return Err(Error::ModelConfig(format!(
                "expected at most 2 [[radicals]] entries, found {}",
                self.radicals.len()
            )));
        }
        for (i, rad) in self.radicals.iter().enumerate() {
            for n in &rad.nuclei {
                if n.tensor_mt.len() != 9 {
                    return Err(Error::ModelConfig(format!(
                        "radicals[{i}] nucleus '{}': tensor_mT needs 9 numbers, got {}",
                        n.name,
                        n.tensor_mt.len()
                    )));
                }
                if n.multiplicity < 2 {
                    return Err(Error::ModelConfig(format!(
                        "radicals[{i}] nucleus '{}': multiplicity {} < 2",
                        n.name, n.multiplicity
                    )));
                }
            }
        }
        if let Some(d) = &self.drive {
            ModulationSpec::harmonic(d.nu_mhz, d.delta_a).map_err(to_config)?;
        }
        if let Some(integ) = &self.integrator {
            if let Some(s) = &integ.scheme {
                if s != "exponential" && s != "rk4" {
                    return Err(Error::ModelConfig(format!(
                        "integrator.scheme must be \"exponential\" or \"rk4\", got \"{s}\""
                    )));
                }
            }
        }
        self.to_model().map(|_| ())
    }

    pub fn spin_system(&self) -> Result<SpinSystem> {
        let mut nuclei = Vec::new();
        for (i, rad) in self.radicals.iter().enumerate() {
            let radical = if i == 0 { Radical::One } else { Radical::Two };
            for n in &rad.nuclei {
                let rows: [f64; 9] = n
                    .tensor_mt
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::ModelConfig(format!("nucleus '{}': tensor_mT needs 9 numbers", n.name)))?;
                nuclei.push(Nucleus {
                    name: n.name.clone(),
                    multiplicity: SpinMultiplicity::new(n.multiplicity).map_err(to_config)?,
                    tensor: HyperfineTensor::from_mt(rows).map_err(to_config)?,
                    radical,
                });
            }
        }
        let gyro = self
            .electrons
            .as_ref()
            .map_or([GAMMA_E_MHZ_PER_MT; 2], |e| e.gyro_mhz_per_mt);
        Ok(SpinSystem::with_gyro(nuclei, gyro))
    }

    pub fn to_model(&self) -> Result<RadicalPairModel> {
        let axis = GeometryCouplings::normalized_axis(self.geometry.axis).map_err(to_config)?;
        let c = &self.couplings;
        let geometry = GeometryCouplings::new(self.geometry.r0_a, axis, 0.0, c.beta_per_a, c.dipolar, c.exchange)
            .map_err(to_config)?
            .with_j0_mhz(c.j0_over_2pi_mhz);
        let rates = RateModel::new(self.rates.kf_per_us, self.rates.kb0_per_us).map_err(to_config)?;
        RadicalPairModel::new(
            self.spin_system()?,
            geometry,
            rates,
            self.relaxation.gamma_per_us,
            self.field.b0_ut,
        )
        .map_err(to_config)
    }

    /// Harmonic drive from the `[drive]` section, static otherwise.
    pub fn modulation(&self) -> ModulationSpec {
        match &self.drive {
            Some(d) => ModulationSpec::Harmonic {
                nu_mhz: d.nu_mhz,
                delta_a: d.delta_a,
            },
            None => ModulationSpec::Static,
        }
    }
}

fn to_config(e: Error) -> Error {
    Error::ModelConfig(e.to_string())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
