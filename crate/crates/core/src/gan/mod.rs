//! DCGAN generator and discriminator, adversarial losses, orthogonal
//! regularization and truncated latent sampling.

mod latent;
mod loss;
mod models;
mod network;

pub use latent::{sample_latents, truncated_sample, LatentBatch};
pub use loss::{
    discriminator_loss, discriminator_loss_on, generator_loss, generator_loss_on, generator_loss_with,
    value_function, GeneratorObjective, PROB_CLAMP,
};
pub use models::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, LEAKY_SLOPE, SUPPORTED_RESOLUTIONS};
pub use network::{BatchNorm2d, Forward, Layer, Mode, Network, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, INIT_STD};

use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum GanError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("value {value} at index {index} is not a probability")]
    InvalidProbability { index: usize, value: f64 },
    #[error("orthogonal regularization weight must be nonnegative, got {0}")]
    NegativeBeta(f64),
    #[error("truncation threshold must be positive, got {0}")]
    InvalidTau(f64),
    #[error("unsupported resolution {0}; expected one of 32, 64")]
    UnsupportedResolution(usize),
    #[error("discriminator expects N×3×{expected}×{expected} input, got {shape:?}")]
    ResolutionMismatch { expected: usize, shape: Vec<usize> },
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl GanError {
    /// Collapses into a tensor error, for closures that must return one.
    pub fn into_tensor(self) -> TensorError {
        match self {
            GanError::Tensor(t) => t,
            other => TensorError::InvalidArgument {
                op: "gan",
                reason: other.to_string(),
            },
        }
    }
}

/// β · ‖WᵀW ⊙ (1 − I)‖²_F, with W flattened to (leading extent) × (rest).
pub fn orthogonal_regularization(w: &Tensor, beta: f64) -> Result<f64, GanError> {
    if !(beta >= 0.0) {
        return Err(GanError::NegativeBeta(beta));
    }
    let mut tape = Tape::new();
    let v = tape.constant(w);
    let p = tape.orthogonal_penalty(v)?;
    Ok(beta * tape.value(p)[0])
}

/// Differentiable β-weighted penalty summed over several weights.
pub fn orthogonal_regularization_on(tape: &mut Tape, weights: &[Var], beta: f64) -> Result<Option<Var>, GanError> {
    if !(beta >= 0.0) {
        return Err(GanError::NegativeBeta(beta));
    }
    let mut total: Option<Var> = None;
    for &w in weights {
        let p = tape.orthogonal_penalty(w)?;
        total = Some(match total {
            Some(t) => tape.add(t, p)?,
            None => p,
        });
    }
    Ok(total.map(|t| tape.scale(t, beta)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::new([rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn ortho_fixtures() {
        assert_eq!(orthogonal_regularization(&m(2, 2, &[1., 0., 0., 1.]), 3.0).unwrap(), 0.0);
        assert_eq!(orthogonal_regularization(&m(2, 2, &[1., 1., 0., 1.]), 1.0).unwrap(), 2.0);
        assert_eq!(orthogonal_regularization(&m(2, 2, &[1., 1., 1., 1.]), 0.5).unwrap(), 4.0);
    }

    #[test]
    fn ortho_rejects_negative_beta_and_vectors() {
        assert!(matches!(
            orthogonal_regularization(&m(2, 2, &[1., 1., 0., 1.]), -1.0),
            Err(GanError::NegativeBeta(_))
        ));
        assert!(orthogonal_regularization(&Tensor::zeros([3]), 1.0).is_err());
    }

    #[test]
    fn ortho_flattens_higher_rank() {
        let w = Tensor::new([2, 1, 1, 2], vec![1., 1., 0., 1.]).unwrap();
        assert_eq!(orthogonal_regularization(&w, 1.0).unwrap(), 2.0);
    }
}
