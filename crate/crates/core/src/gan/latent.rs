use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::GanError;
use crate::tensor::Tensor;

/// A batch × latent_dim block of standard-normal draws.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub batch: usize,
    pub latent_dim: usize,
    pub tau: Option<f64>,
    pub values: Vec<f64>,
}

impl LatentBatch {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.batch, self.latent_dim], self.values.clone()).expect("latent batch is well formed")
    }
}

fn check_tau(tau: Option<f64>) -> Result<(), GanError> {
    match tau {
        Some(t) if !(t > 0.0) => Err(GanError::InvalidTau(t)),
        _ => Ok(()),
    }
}

/// Draws with an explicit generator. With a threshold, each component with
/// |value| > tau is redrawn independently until it lands inside.
pub fn sample_latents<R: Rng + ?Sized>(
    rng: &mut R,
    batch: usize,
    latent_dim: usize,
    tau: Option<f64>,
) -> Result<LatentBatch, GanError> {
    check_tau(tau)?;
    let mut values = Vec::with_capacity(batch * latent_dim);
    for _ in 0..batch * latent_dim {
        let mut v: f64 = rng.sample(StandardNormal);
        if let Some(t) = tau {
            while v.abs() > t {
                v = rng.sample(StandardNormal);
            }
        }
        values.push(v);
    }
    Ok(LatentBatch {
        batch,
        latent_dim,
        tau,
        values,
    })
}

/// Truncation-trick sampling from a seed.
pub fn truncated_sample(batch: usize, latent_dim: usize, tau: Option<f64>, seed: u64) -> Result<LatentBatch, GanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_latents(&mut rng, batch, latent_dim, tau)
}
