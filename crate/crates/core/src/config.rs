//! Run configuration document: one TOML file with every field defaulted and
//! unknown keys rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::safety_index::{IndexPreset, SafetyIndexParams};
use crate::trainer::{NetworkConfig, TrainerConfig};
use crate::verify::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexConfig {
    pub preset: IndexPreset,
    pub eta_d: f64,
    /// Explicit parameters; required for `learned`, overrides otherwise.
    pub sigma: Option<f64>,
    pub n: Option<f64>,
    pub k: Option<f64>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            preset: IndexPreset::PhiH,
            eta_d: 0.0,
            sigma: None,
            n: None,
            k: None,
        }
    }
}

impl IndexConfig {
    pub fn resolve(&self, d_min: f64) -> Result<SafetyIndexParams> {
        let base = match self.preset.params(d_min) {
            Some(p) => p,
            None => match (self.sigma, self.n, self.k) {
                (Some(s), Some(n), Some(k)) => SafetyIndexParams::new(s, n, k, d_min),
                _ => {
                    return Err(Error::Config(
                        "safety_index: preset `learned` needs sigma, n and k".into(),
                    ))
                }
            },
        };
        let z = SafetyIndexParams {
            sigma: self.sigma.unwrap_or(base.sigma),
            n: self.n.unwrap_or(base.n),
            k: self.k.unwrap_or(base.k),
            ..base
        }
        .with_eta(self.eta_d);
        z.validate()?;
        Ok(z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub grid: GridSpec,
    pub eval_trajectories: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            eval_trajectories: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingConfig {
    /// Also write the evaluation series as CSV next to the JSON-lines log.
    pub csv: bool,
    /// Print one line per evaluation to stderr.
    pub progress: bool,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self {
            csv: true,
            progress: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub networks: NetworkConfig,
    pub trainer: TrainerConfig,
    pub safety_index: IndexConfig,
    pub verify: VerifyConfig,
    pub logging: LoggingConfig,
}

impl RunConfig {
    /// Parses and validates; syntax and schema errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("configuration error: "))))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.networks.validate()?;
        self.trainer.validate()?;
        self.safety_index.resolve(self.env.d_min)?;
        self.verify.grid.validate()?;
        if self.verify.eval_trajectories == 0 {
            return Err(Error::Config("verify.eval_trajectories must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical serialization; the hash is taken over this text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn initial_index(&self) -> Result<SafetyIndexParams> {
        self.safety_index.resolve(self.env.d_min)
    }
}
