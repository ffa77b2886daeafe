//! PPO imitation training: state assembly, Gaussian policy, environments,
//! advantage estimation and the optimisation loop.

pub mod env;
pub mod gae;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod state;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::ContactError;
use crate::model::ModelError;
use crate::physics::SimError;
use crate::reward::RewardError;

pub use env::{check_termination, EnvSettings, HoiEnv, StepOutcome, TerminationReason, Thresholds};
pub use gae::compute_gae;
pub use policy::{sample_action, PolicyModel};
pub use ppo::{ppo_update, LossStats, Minibatch};
pub use state::{build_state, state_len};
pub use train::{train, train_with, Checkpoint, IterationLog, Progress, TrainOutcome};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("episode already finished; reset first")]
    EpisodeOver,
    #[error("{diverged} of {envs} environments diverged in iteration {iteration}")]
    Diverged { iteration: usize, diverged: usize, envs: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub num_envs: usize,
    /// Control steps per environment per iteration.
    pub horizon: usize,
    pub iterations: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub normalize_advantages: bool,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Bootstrap the value at error terminations as well as at max time;
    /// by default they end the return.
    pub bootstrap_terminal: bool,
    /// Write a checkpoint every this many iterations (0 disables periodic ones).
    pub checkpoint_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch_size: 64,
            num_envs: 16,
            horizon: 10,
            iterations: 3000,
            hidden: vec![256, 128],
            init_log_std: 0.3f64.ln(),
            normalize_advantages: true,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            bootstrap_terminal: false,
            checkpoint_every: 500,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.num_envs == 0 || self.horizon == 0 || self.epochs == 0 || self.minibatch_size == 0 {
            return bad("num_envs, horizon, epochs and minibatch_size must be at least 1");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive");
        }
        if !self.init_log_std.is_finite() {
            return bad("init_log_std must be finite");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("loss coefficients must be non-negative and max_grad_norm positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_bad_values_do_not() {
        PpoConfig::default().validate().unwrap();
        for cfg in [
            PpoConfig { gamma: 1.0, ..PpoConfig::default() },
            PpoConfig { clip: 0.0, ..PpoConfig::default() },
            PpoConfig { num_envs: 0, ..PpoConfig::default() },
            PpoConfig { hidden: vec![0], ..PpoConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PpoConfig>(r#"{"gama": 0.9}"#).is_err());
        let c: PpoConfig = serde_json::from_str(r#"{"num_envs": 2}"#).unwrap();
        assert_eq!(c.num_envs, 2);
        assert_eq!(c.horizon, 10);
    }
}
