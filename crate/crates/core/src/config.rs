//! JSON experiment configuration and its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::physics::{ArticulatedModel, DiscObject, SimConfig, SimError};
use crate::reward::{RewardError, RewardMode, RewardWeights};
use crate::rl::{EnvSettings, PpoConfig, RlError, Thresholds};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Ppo(#[from] RlError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(default)]
    pub physics: SimConfig,
    #[serde(default = "ArticulatedModel::toy_arm")]
    pub model: ArticulatedModel,
    #[serde(default = "DiscObject::ball")]
    pub disc: DiscObject,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self { physics: SimConfig::default(), model: ArticulatedModel::toy_arm(), disc: DiscObject::ball() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardBlock {
    #[serde(default)]
    pub mode: RewardMode,
    #[serde(default)]
    pub lambda: RewardWeights,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub reward: RewardBlock,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub termination: Thresholds,
    /// Reference sequence file, resolved relative to the config file.
    #[serde(default)]
    pub sequence: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config; a relative `sequence` path is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(seq), Some(dir)) = (&cfg.sequence, path.parent()) {
            if seq.is_relative() {
                cfg.sequence = Some(dir.join(seq));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.physics.validate()?;
        self.sim.model.validate()?;
        self.sim.disc.validate()?;
        self.reward.lambda.validate(self.reward.lambda.cg.len())?;
        self.ppo.validate()?;
        let t = &self.termination;
        if !(t.object > 0.0 && t.body > 0.0) {
            return Err(RlError::InvalidConfig("termination thresholds must be positive".into()).into());
        }
        Ok(())
    }

    pub fn env_settings(&self) -> EnvSettings {
        EnvSettings {
            weights: self.reward.lambda.clone(),
            mode: self.reward.mode,
            thresholds: self.termination,
            early_termination: true,
        }
    }

    /// Hex SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
