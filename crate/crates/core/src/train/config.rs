use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Augmentation;

/// How the critic is kept Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Lipschitz {
    /// Two-sided penalty on the input-gradient norm at random interpolates.
    GradientPenalty,
    /// Clamp critic parameters to `[-clip, clip]` after every critic update.
    WeightClip { clip: f64 },
}

/// Hyperparameters of the adversarial training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the boundary content loss in the generator objective.
    pub content_coeff: f64,
    pub gp_weight: f64,
    /// Critic updates per generator update.
    pub critic_per_g: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub i_max: usize,
    /// Iterations between preview snapshots.
    pub snapshot_every: usize,
    pub lipschitz: Lipschitz,
    pub augmentation: Augmentation,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            content_coeff: 1.0,
            gp_weight: 10.0,
            critic_per_g: 10,
            batch_size: 8,
            learning_rate: 1e-4,
            adam_betas: (0.9, 0.99),
            i_max: 100_000,
            snapshot_every: 500,
            lipschitz: Lipschitz::GradientPenalty,
            augmentation: Augmentation::FlipsAndRot90,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gp_weight", self.gp_weight),
            ("learning_rate", self.learning_rate),
            ("adam_betas.0", self.adam_betas.0),
            ("adam_betas.1", self.adam_betas.1),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.content_coeff >= 0.0 && self.content_coeff.is_finite()) {
            return Err(Error::Config(format!("content_coeff must be non-negative, got {}", self.content_coeff)));
        }
        if self.adam_betas.0 >= 1.0 || self.adam_betas.1 >= 1.0 {
            return Err(Error::Config("adam betas must be below 1".into()));
        }
        for (name, v) in [
            ("critic_per_g", self.critic_per_g),
            ("batch_size", self.batch_size),
            ("i_max", self.i_max),
            ("snapshot_every", self.snapshot_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if let Lipschitz::WeightClip { clip } = self.lipschitz {
            if !(clip > 0.0) {
                return Err(Error::Config("weight clip must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Boundary MSE plus a KL term tying the seed's moments to N(0, 1).
    #[default]
    KlAnchor,
    /// Boundary MSE, standardising the seed after every step.
    Renormalize,
    /// Boundary MSE only.
    Unconstrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZOptConfig {
    pub iterations: usize,
    pub seed_lr: f64,
    pub kl_weight: f64,
    pub mode: SeedMode,
    pub record_every: usize,
}

impl Default for ZOptConfig {
    fn default() -> Self {
        Self { iterations: 10_000, seed_lr: 1e-2, kl_weight: 1.0, mode: SeedMode::KlAnchor, record_every: 100 }
    }
}

impl ZOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.record_every == 0 {
            return Err(Error::Config("iterations and record_every must be at least 1".into()));
        }
        if !(self.seed_lr > 0.0 && self.seed_lr.is_finite()) {
            return Err(Error::Config(format!("seed_lr must be positive, got {}", self.seed_lr)));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!("kl_weight must be non-negative, got {}", self.kl_weight)));
        }
        Ok(())
    }
}

/// Read a config from TOML or JSON, chosen by file extension.
pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string())),
        _ => toml::from_str(&text).map_err(|e| Error::Config(e.to_string())),
    }
}
