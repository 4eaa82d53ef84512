//! Run configuration: JSON in conventional units (GHz, MHz, ns).
//!
//! Every block and every field is optional; missing values take the
//! defaults below. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use geogate::model::{couplings_from_mhz, PhysicalParams, DEFAULT_COUPLINGS_MHZ, TWO_PI};
use geogate::opt_krotov::KrotovSettings;
use geogate::opt_montecarlo::MonteCarloSettings;
use geogate::opt_variational::{DescentSettings, DEFAULT_GEODESIC_STEPS};

use crate::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "GEOGATE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConfig {
    /// ω_z/2π.
    pub qubit_frequency_ghz: f64,
    /// J_{μν}/2π, row μ and column ν of σ_μ⊗σ_ν.
    pub couplings_mhz: [[f64; 4]; 4],
    /// CDD base frequency ω/2π.
    pub cdd_frequency_ghz: f64,
    pub gate_time_ns: f64,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        PhysicalConfig {
            qubit_frequency_ghz: 5.0,
            couplings_mhz: DEFAULT_COUPLINGS_MHZ,
            cdd_frequency_ghz: 20.0,
            gate_time_ns: 40.0,
        }
    }
}

impl PhysicalConfig {
    pub fn params(&self) -> PhysicalParams {
        PhysicalParams {
            omega_z: TWO_PI * self.qubit_frequency_ghz * 1e9,
            couplings: couplings_from_mhz(&self.couplings_mhz),
            omega_cdd: TWO_PI * self.cdd_frequency_ghz * 1e9,
            tau: self.gate_time_ns * 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub geodesic_steps: usize,
    pub cdd_steps_per_fast_period: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { geodesic_steps: DEFAULT_GEODESIC_STEPS, cdd_steps_per_fast_period: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CddBenchConfig {
    /// ω/2π values to benchmark.
    pub frequencies_ghz: Vec<f64>,
    /// Also report the undriven (no CDD) fidelity.
    pub include_undriven: bool,
}

impl Default for CddBenchConfig {
    fn default() -> Self {
        CddBenchConfig { frequencies_ghz: vec![2.0, 10.0, 20.0], include_undriven: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// ω/2π values at which `verify` propagates the full stack.
    pub frequencies_ghz: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { frequencies_ghz: vec![2.0, 10.0, 20.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub physical: PhysicalConfig,
    pub grids: GridConfig,
    pub cdd_bench: CddBenchConfig,
    pub verify: VerifyConfig,
    pub variational: DescentSettings,
    pub montecarlo: MonteCarloSettings,
    pub krotov: KrotovSettings,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            physical: PhysicalConfig::default(),
            grids: GridConfig::default(),
            cdd_bench: CddBenchConfig::default(),
            verify: VerifyConfig::default(),
            variational: DescentSettings::default(),
            montecarlo: MonteCarloSettings::default(),
            krotov: KrotovSettings::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn positive_frequencies(name: &str, values: &[f64]) -> Result<(), CliError> {
    match values.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
        Some(f) => Err(CliError::Config(format!("{name}: frequency must be positive, got {f}"))),
        None => Ok(()),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Loads `path`, else the file named by [`CONFIG_ENV`], else the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.physical;
        if !(p.gate_time_ns > 0.0 && p.gate_time_ns.is_finite()) {
            return Err(CliError::Config(format!("gate_time_ns must be positive, got {}", p.gate_time_ns)));
        }
        positive_frequencies("physical.cdd_frequency_ghz", &[p.cdd_frequency_ghz])?;
        self.params().validate()?;
        if self.grids.geodesic_steps < 2 || self.grids.cdd_steps_per_fast_period < 1 {
            return Err(CliError::Config("grids: geodesic_steps ≥ 2 and cdd_steps_per_fast_period ≥ 1".into()));
        }
        positive_frequencies("cdd_bench.frequencies_ghz", &self.cdd_bench.frequencies_ghz)?;
        positive_frequencies("verify.frequencies_ghz", &self.verify.frequencies_ghz)?;
        self.variational.validate()?;
        self.montecarlo.validate()?;
        self.krotov.validate()?;
        Ok(())
    }

    pub fn params(&self) -> PhysicalParams {
        self.physical.params()
    }

    /// SHA-256 of the canonical JSON form (defaults filled in).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"physical": {"tau": 40}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grid": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"variational": {"step": 0.1}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"physical": {"gate_time_ns": -1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grids": {"geodesic_steps": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"cdd_bench": {"frequencies_ghz": [0]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"variational": {"eta": 1.5}}"#).is_err());
    }

    #[test]
    fn default_params_match_library_defaults() {
        let a = RunConfig::default().params();
        let b = PhysicalParams::default();
        assert!((a.tau - b.tau).abs() < 1e-24);
        assert!((a.omega_cdd - b.omega_cdd).abs() < 1e-3);
        assert_eq!(a.couplings, b.couplings);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.grids.geodesic_steps = 1000;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
