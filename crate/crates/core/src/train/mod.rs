//! Adversarial training: Adam, the alternating D/G step, the epoch loop,
//! binary checkpoints and sampling from a checkpoint.

mod adam;
mod checkpoint;
mod sample;
mod step;
mod trainer;

pub use adam::{Adam, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use sample::{generate_samples, GeneratedSamples, SampleProvenance, WrittenSample};
pub use step::{discriminator_step, generator_step, train_step, StepMetrics};
pub use trainer::{train, EpochMetrics, ImageSet, TrainOutputs, TrainReport, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gan::{DiscriminatorSpec, GanError, GeneratorObjective, GeneratorSpec};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite {what} at iteration {iteration}{}", .diagnostic.as_ref().map(|p| format!("; diagnostic checkpoint at {}", p.display())).unwrap_or_default())]
    NonFinite {
        what: String,
        iteration: u64,
        diagnostic: Option<std::path::PathBuf>,
    },
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Dcgan64,
    Dcgan32,
}

impl Preset {
    pub fn resolution(self) -> usize {
        match self {
            Preset::Dcgan64 => 64,
            Preset::Dcgan32 => 32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Dcgan64 => "dcgan-64",
            Preset::Dcgan32 => "dcgan-32",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dcgan-64" => Some(Preset::Dcgan64),
            "dcgan-32" => Some(Preset::Dcgan32),
            _ => None,
        }
    }
}

/// Stopping rule for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budget {
    Epochs(u64),
    /// Stops after this many D/G iterations, mid-epoch if needed.
    Iterations(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub budget: Budget,
    /// Truncation threshold for the periodic sample grids.
    pub truncation_tau: Option<f64>,
    /// Orthogonal penalty weight on generator convolution kernels; 0 disables.
    pub ortho_beta: f64,
    pub objective: GeneratorObjective,
    pub seed: u64,
}

impl TrainConfig {
    pub fn dcgan(preset: Preset) -> Self {
        Self {
            preset,
            latent_dim: 100,
            base_channels: 64,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            budget: Budget::Epochs(1),
            truncation_tau: None,
            ortho_beta: 1e-4,
            objective: GeneratorObjective::NonSaturating,
            seed: 0,
        }
    }

    /// Two-timescale learning rates with a larger batch.
    pub fn biggan_style(preset: Preset) -> Self {
        Self {
            lr_g: 1e-4,
            lr_d: 4e-4,
            batch_size: 256,
            ..Self::dcgan(preset)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.adam_g().validate()?;
        self.adam_d().validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(TrainError::Config("latent_dim and base_channels must be positive".into()));
        }
        if !(self.ortho_beta >= 0.0) {
            return Err(TrainError::Config(format!("ortho_beta must be nonnegative, got {}", self.ortho_beta)));
        }
        if let Some(t) = self.truncation_tau {
            if !(t > 0.0) {
                return Err(TrainError::Config(format!("truncation tau must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn adam_g(&self) -> Adam {
        Adam {
            lr: self.lr_g,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn adam_d(&self) -> Adam {
        Adam {
            lr: self.lr_d,
            ..self.adam_g()
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            latent_dim: self.latent_dim,
            base_channels: self.base_channels,
            output_resolution: self.preset.resolution(),
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            input_resolution: self.preset.resolution(),
            base_channels: self.base_channels,
        }
    }
}
