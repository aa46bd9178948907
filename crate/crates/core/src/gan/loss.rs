//! The adversarial value function and the per-player losses derived from it.
//!
//! V(D, G) = E_x[log D(x)] + E_z[log(1 − D(G(z)))], with expectations replaced
//! by batch means. Probabilities are clamped to [1e-7, 1 − 1e-7] before logs.

use serde::{Deserialize, Serialize};

use super::GanError;
use crate::tensor::{Tape, TensorError, Var};

pub const PROB_CLAMP: f64 = 1e-7;

/// Objective the generator minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorObjective {
    /// −E_z[log D(G(z))]
    #[default]
    NonSaturating,
    /// E_z[log(1 − D(G(z)))], the literal minimax term.
    Minimax,
}

fn check_probs(probs: &[f64]) -> Result<(), GanError> {
    if probs.is_empty() {
        return Err(GanError::EmptyBatch);
    }
    if let Some((i, &p)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p >= 0.0 && **p <= 1.0))
    {
        return Err(GanError::InvalidProbability { index: i, value: p });
    }
    Ok(())
}

fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

pub fn value_function(d_real: &[f64], d_fake: &[f64]) -> Result<f64, GanError> {
    check_probs(d_real)?;
    check_probs(d_fake)?;
    let real = mean(d_real.iter().map(|&p| clamped_ln(p)), d_real.len());
    let fake = mean(d_fake.iter().map(|&p| clamped_ln(1.0 - p)), d_fake.len());
    Ok(real + fake)
}

/// −V(D, G); minimizing it maximizes V with respect to D.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64, GanError> {
    Ok(-value_function(d_real, d_fake)?)
}

/// Non-saturating generator loss, −mean(log D(G(z))).
pub fn generator_loss(d_fake: &[f64]) -> Result<f64, GanError> {
    generator_loss_with(d_fake, GeneratorObjective::NonSaturating)
}

pub fn generator_loss_with(d_fake: &[f64], objective: GeneratorObjective) -> Result<f64, GanError> {
    check_probs(d_fake)?;
    let n = d_fake.len();
    Ok(match objective {
        GeneratorObjective::NonSaturating => -mean(d_fake.iter().map(|&p| clamped_ln(p)), n),
        GeneratorObjective::Minimax => mean(d_fake.iter().map(|&p| clamped_ln(1.0 - p)), n),
    })
}

fn log_prob(tape: &mut Tape, p: Var) -> Result<Var, TensorError> {
    tape.log_clamped(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn log_one_minus(tape: &mut Tape, p: Var) -> Result<Var, TensorError> {
    let neg = tape.scale(p, -1.0);
    let q = tape.add_scalar(neg, 1.0);
    tape.log_clamped(q, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Differentiable −V(D, G) over recorded discriminator outputs.
pub fn discriminator_loss_on(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var, GanError> {
    if tape.value(d_real).is_empty() || tape.value(d_fake).is_empty() {
        return Err(GanError::EmptyBatch);
    }
    let lr = log_prob(tape, d_real)?;
    let real = tape.mean(lr);
    let lf = log_one_minus(tape, d_fake)?;
    let fake = tape.mean(lf);
    let v = tape.add(real, fake)?;
    Ok(tape.scale(v, -1.0))
}

/// Differentiable generator loss over recorded D(G(z)).
pub fn generator_loss_on(tape: &mut Tape, d_fake: Var, objective: GeneratorObjective) -> Result<Var, GanError> {
    if tape.value(d_fake).is_empty() {
        return Err(GanError::EmptyBatch);
    }
    Ok(match objective {
        GeneratorObjective::NonSaturating => {
            let l = log_prob(tape, d_fake)?;
            let m = tape.mean(l);
            tape.scale(m, -1.0)
        }
        GeneratorObjective::Minimax => {
            let l = log_one_minus(tape, d_fake)?;
            tape.mean(l)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tensor};

    const LN_HALF: f64 = -std::f64::consts::LN_2;

    #[test]
    fn value_function_fixtures() {
        let v = value_function(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!((v - 2.0 * LN_HALF).abs() < 1e-12);
        assert!((v + 1.386294).abs() < 1e-6);

        let perfect = value_function(&[1.0 - 1e-7], &[1e-7]).unwrap();
        assert!(perfect.abs() < 1e-6);

        let v = value_function(&[0.9], &[0.2]).unwrap();
        assert!((v - (0.9f64.ln() + 0.8f64.ln())).abs() < 1e-15);
        assert!((v + 0.328504).abs() < 1e-6);
    }

    #[test]
    fn discriminator_loss_fixtures() {
        assert!((discriminator_loss(&[0.5], &[0.5]).unwrap() - 1.386294).abs() < 1e-6);
        assert!(discriminator_loss(&[1.0], &[0.0]).unwrap().abs() < 1e-6);
        assert!((discriminator_loss(&[0.9], &[0.2]).unwrap() - 0.328504).abs() < 1e-6);
    }

    #[test]
    fn generator_loss_fixtures() {
        assert!((generator_loss(&[0.5]).unwrap() - 0.693147).abs() < 1e-6);
        assert!(generator_loss(&[1.0]).unwrap() < 1e-6);
        let expected = -(0.25f64.ln() + 0.75f64.ln()) / 2.0;
        assert!((generator_loss(&[0.25, 0.75]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.836988).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert!(matches!(value_function(&[], &[0.5]), Err(GanError::EmptyBatch)));
        assert!(matches!(generator_loss(&[]), Err(GanError::EmptyBatch)));
        assert!(matches!(
            generator_loss(&[0.5, 1.5]),
            Err(GanError::InvalidProbability { index: 1, .. })
        ));
        assert!(generator_loss(&[f64::NAN]).is_err());
    }

    #[test]
    fn minimax_objective() {
        let l = generator_loss_with(&[0.5], GeneratorObjective::Minimax).unwrap();
        assert!((l - LN_HALF).abs() < 1e-15);
    }

    #[test]
    fn tape_losses_match_plain_and_differentiate() {
        let real = [0.7, 0.2, 0.95];
        let fake = [0.1, 0.6];
        let mut tape = Tape::new();
        let r = tape.leaf(&Tensor::new([3], real.to_vec()).unwrap());
        let f = tape.leaf(&Tensor::new([2], fake.to_vec()).unwrap());
        let l = discriminator_loss_on(&mut tape, r, f).unwrap();
        assert!((tape.value(l)[0] - discriminator_loss(&real, &fake).unwrap()).abs() < 1e-15);

        let mut params = vec![
            Tensor::new([3], real.to_vec()).unwrap(),
            Tensor::new([2], fake.to_vec()).unwrap(),
        ];
        let err = grad_check(&mut params, 1e-6, |tape, v| {
            discriminator_loss_on(tape, v[0], v[1]).map_err(GanError::into_tensor)
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
        for objective in [GeneratorObjective::NonSaturating, GeneratorObjective::Minimax] {
            let mut params = vec![Tensor::new([2], fake.to_vec()).unwrap()];
            let err = grad_check(&mut params, 1e-6, |tape, v| {
                generator_loss_on(tape, v[0], objective).map_err(GanError::into_tensor)
            })
            .unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }
}
