//! Conservative Q-learning with twin critics, an entropy-regularised
//! discrete actor, behaviour cloning and a magnitude head.

pub mod losses;
mod trainer;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::dataset::DatasetError;
use crate::encoders::EncoderError;
use crate::model::ModelError;

pub use trainer::{BatchGradients, LossReport, Trainer, TrainingSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha_cql: f64,
    pub gamma: f64,
    pub tau_soft: f64,
    pub alpha_entropy: f64,
    pub lambda_mag: f64,
    pub bc_weight: f64,
    pub lr_encoder: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_mag: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_transitions_per_update: usize,
    pub bucket_boundaries: Vec<usize>,
    /// Clamp expert step lengths to `δ_max` before magnitude regression.
    pub clamp_magnitude_target: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_cql: 0.01,
            gamma: 0.95,
            tau_soft: 0.005,
            alpha_entropy: 0.2,
            lambda_mag: 1.0,
            bc_weight: 1.0,
            lr_encoder: 1e-4,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_mag: 3e-4,
            epochs: 100,
            batch_size: 8,
            max_transitions_per_update: 2048,
            bucket_boundaries: vec![8, 12],
            clamp_magnitude_target: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("alpha_cql", self.alpha_cql),
            ("gamma", self.gamma),
            ("tau_soft", self.tau_soft),
            ("alpha_entropy", self.alpha_entropy),
            ("lambda_mag", self.lambda_mag),
            ("lr_encoder", self.lr_encoder),
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_mag", self.lr_mag),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gamma >= 1.0 || self.tau_soft > 1.0 {
            return Err(TrainError::InvalidConfig("gamma must be < 1 and tau_soft <= 1".into()));
        }
        if !(self.bc_weight >= 0.0) {
            return Err(TrainError::InvalidConfig("bc_weight must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.max_transitions_per_update == 0 {
            return Err(TrainError::InvalidConfig("batch sizes must be at least 1".into()));
        }
        Ok(())
    }
}
