use std::path::Path;

use exitnet::signal::DatasetConfig;
use exitnet::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Stochastic passes for Monte Carlo dropout models.
    pub samples: usize,
    /// Timed repetitions per benchmark entry.
    pub latency_runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples: 5, latency_runs: 5 }
    }
}

/// Every tunable of every command. Precedence: defaults, then the config
/// file, then command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        if self.eval.samples == 0 || self.eval.latency_runs == 0 {
            return Err(CliError::Config("eval samples and latency runs must be at least 1".into()));
        }
        self.dataset.synth.validate()?;
        self.dataset.augment.validate()?;
        self.dataset.split.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize effective config: {e}")))
    }

    /// Hex SHA-256 of the serialized configuration.
    pub fn digest(&self) -> CliResult<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// Writes `effective_config.toml` and its digest into `dir`.
    pub fn echo(&self, dir: &Path) -> CliResult<String> {
        let text = self.to_toml()?;
        let digest = sha256_hex(text.as_bytes());
        crate::write_file(&dir.join("effective_config.toml"), text.as_bytes())?;
        crate::write_file(&dir.join("effective_config.sha256"), format!("{digest}\n").as_bytes())?;
        Ok(digest)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
