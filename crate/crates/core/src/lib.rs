//! Desk-scale DCGAN toolkit: f64 tensors with reverse-mode differentiation,
//! DCGAN players and losses, seeded adversarial training with checkpoints,
//! truncated sampling, dataset preprocessing, Inception Score over a
//! classifier probe, engagement metrics, and a journaled curation service.

pub mod cli;
pub mod data;
pub mod engagement;
pub mod gan;
pub mod imaging;
pub mod metrics;
pub mod tensor;
pub mod train;
