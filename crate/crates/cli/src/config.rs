//! Experiment configuration: one JSON file covering world generation,
//! reward-model training, policy optimization, and drift detection.
//!
//! Every field has a default (the values used throughout the test suite),
//! unknown keys are rejected to catch typos, and the seed list drives all
//! per-seed randomness: seed `s` seeds the world, the trainer, and the
//! policy run alike, with each consumer deriving its own substreams.

use std::path::Path;

use serde::Deserialize;

use hackwatch_core::detect::DbscanParams;
use hackwatch_core::reward::{Optimizer, TrainConfig};
use hackwatch_core::world::{RlConfig, WorldConfig};

use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub feature_dim: usize,
    pub relevant_dims: usize,
    pub n_pairs: usize,
    pub noise_frac: f64,
    pub spurious_corr: f64,
    pub spurious_offset: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        let d = WorldConfig::default();
        WorldSection {
            feature_dim: d.feature_dim,
            relevant_dims: d.relevant_dims,
            n_pairs: d.n_pairs,
            noise_frac: d.noise_frac,
            spurious_corr: d.spurious_corr,
            spurious_offset: d.spurious_offset,
        }
    }
}

impl WorldSection {
    pub fn to_core(&self, seed: u64) -> WorldConfig {
        WorldConfig {
            feature_dim: self.feature_dim,
            relevant_dims: self.relevant_dims,
            n_pairs: self.n_pairs,
            noise_frac: self.noise_frac,
            spurious_corr: self.spurious_corr,
            spurious_offset: self.spurious_offset,
            seed,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.feature_dim < 2 {
            return Err(usage("world.feature_dim must be >= 2"));
        }
        if self.relevant_dims < 1 || self.relevant_dims > self.feature_dim {
            return Err(usage("world.relevant_dims must be in 1..=feature_dim"));
        }
        if self.n_pairs < 1 {
            return Err(usage("world.n_pairs must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.noise_frac) {
            return Err(usage("world.noise_frac must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.spurious_corr) {
            return Err(usage("world.spurious_corr must be in [0, 1]"));
        }
        if !(self.spurious_offset > 0.0 && self.spurious_offset.is_finite()) {
            return Err(usage("world.spurious_offset must be a positive real"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `"momentum"` or `"sgd"`.
    pub optimizer: String,
    pub beta: f64,
    pub latent_dim: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            optimizer: "momentum".into(),
            beta: d.beta,
            latent_dim: d.latent_dim,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> Result<TrainConfig, CliError> {
        self.validate()?;
        let optimizer = match self.optimizer.as_str() {
            "momentum" => Optimizer::Momentum,
            "sgd" => Optimizer::Sgd,
            other => return Err(usage(format!("train.optimizer: unknown optimizer {other:?}"))),
        };
        Ok(TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            optimizer,
            beta: self.beta,
            latent_dim: self.latent_dim,
        })
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(usage("train.learning_rate must be a positive real"));
        }
        if self.batch_size < 1 {
            return Err(usage("train.batch_size must be >= 1"));
        }
        if self.epochs < 1 {
            return Err(usage("train.epochs must be >= 1"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(usage("train.beta must be a finite nonnegative real"));
        }
        if self.latent_dim < 1 {
            return Err(usage("train.latent_dim must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub steps: usize,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub eval_interval: usize,
    pub probe_size: usize,
}

impl Default for RlSection {
    fn default() -> Self {
        let d = RlConfig::default();
        RlSection {
            steps: d.steps,
            kl_coef: d.kl_coef,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            eval_interval: d.eval_interval,
            probe_size: d.probe_size,
        }
    }
}

impl RlSection {
    pub fn to_core(&self, seed: u64) -> Result<RlConfig, CliError> {
        self.validate()?;
        Ok(RlConfig {
            steps: self.steps,
            kl_coef: self.kl_coef,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            eval_interval: self.eval_interval,
            probe_size: self.probe_size,
            seed,
        })
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.steps < 1 {
            return Err(usage("rl.steps must be >= 1"));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(usage("rl.kl_coef must be a finite nonnegative real"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(usage("rl.learning_rate must be a positive real"));
        }
        if self.batch_size < 1 {
            return Err(usage("rl.batch_size must be >= 1"));
        }
        if self.eval_interval < 1 {
            return Err(usage("rl.eval_interval must be >= 1"));
        }
        if self.probe_size < 1 {
            return Err(usage("rl.probe_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    pub eps: f64,
    pub min_samples: usize,
    /// Maximum tolerable CSI change rate before the monitor stops a run.
    pub eps_max: f64,
}

impl Default for DetectSection {
    fn default() -> Self {
        let d = DbscanParams::default();
        DetectSection { eps: d.eps, min_samples: d.min_samples, eps_max: 10.0 }
    }
}

impl DetectSection {
    pub fn dbscan(&self) -> DbscanParams {
        DbscanParams { eps: self.eps, min_samples: self.min_samples }
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(usage("detect.eps must be a positive real"));
        }
        if self.min_samples < 1 {
            return Err(usage("detect.min_samples must be >= 1"));
        }
        if self.eps_max.is_nan() || self.eps_max <= 0.0 {
            return Err(usage("detect.eps_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub world: WorldSection,
    pub train: TrainSection,
    pub rl: RlSection,
    pub detect: DetectSection,
    pub out_dir: Option<String>,
    pub seeds: Option<Vec<u64>>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![0])
    }

    fn validate(&self) -> Result<(), CliError> {
        self.world.validate()?;
        self.train.validate()?;
        self.rl.validate()?;
        self.detect.validate()?;
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(usage("seeds must not be empty"));
            }
        }
        Ok(())
    }
}
