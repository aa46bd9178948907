use rand::Rng;

use super::{Adam, AdamState, TrainConfig, TrainError};
use crate::gan::{
    discriminator_loss_on, generator_loss_on, orthogonal_regularization_on, sample_latents, Discriminator, Generator,
    GeneratorObjective, Mode,
};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepMetrics {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

impl StepMetrics {
    pub fn is_finite(&self) -> bool {
        [self.d_loss, self.g_loss, self.d_real_mean, self.d_fake_mean]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn non_finite(what: &str) -> TrainError {
    TrainError::NonFinite {
        what: what.to_string(),
        iteration: 0,
        diagnostic: None,
    }
}

fn apply(adam: &Adam, state: &mut AdamState, params: Vec<&mut Tensor>, what: &str) -> Result<(), TrainError> {
    let mut params = params;
    adam.step(&mut params, state)?;
    for p in params.iter_mut() {
        p.zero_grad();
    }
    if params.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(non_finite(what))
    }
}

/// One discriminator update on a real and a fake batch, each normalized with
/// its own batch statistics. Returns (loss, mean D(real), mean D(fake)).
pub fn discriminator_step(
    d: &mut Discriminator,
    adam: &Adam,
    state: &mut AdamState,
    real: &Tensor,
    fake: &Tensor,
) -> Result<(f64, f64, f64), TrainError> {
    let mut tape = Tape::new();
    let xr = tape.constant(real);
    let fr = d.forward(&mut tape, xr, Mode::Train, true)?;
    let xf = tape.constant(fake);
    let ff = d.forward(&mut tape, xf, Mode::Train, true)?;
    let loss = discriminator_loss_on(&mut tape, fr.output, ff.output)?;
    let l = tape.value(loss)[0];
    let real_mean = mean(tape.value(fr.output));
    let fake_mean = mean(tape.value(ff.output));
    if !l.is_finite() {
        return Err(non_finite("discriminator loss"));
    }
    tape.backward(loss)?;
    let net = d.network_mut();
    net.absorb_grads(&tape, &fr)?;
    net.absorb_grads(&tape, &ff)?;
    apply(adam, state, net.params_mut(), "discriminator parameter")?;
    Ok((l, real_mean, fake_mean))
}

/// One generator update through a frozen discriminator. The orthogonal
/// penalty is added to the minimized objective; the returned value is the
/// adversarial term alone.
pub fn generator_step(
    g: &mut Generator,
    d: &mut Discriminator,
    adam: &Adam,
    state: &mut AdamState,
    z: &Tensor,
    objective: GeneratorObjective,
    ortho_beta: f64,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let fg = g.forward(&mut tape, zv, Mode::Train, true)?;
    let fd = d.forward(&mut tape, fg.output, Mode::Train, false)?;
    let adv = generator_loss_on(&mut tape, fd.output, objective)?;
    let adv_value = tape.value(adv)[0];
    let mut total = adv;
    if ortho_beta > 0.0 {
        let weights: Vec<_> = g.network().weight_indices().into_iter().map(|i| fg.params[i]).collect();
        if let Some(p) = orthogonal_regularization_on(&mut tape, &weights, ortho_beta)? {
            total = tape.add(adv, p)?;
        }
    }
    if !tape.value(total)[0].is_finite() {
        return Err(non_finite("generator loss"));
    }
    tape.backward(total)?;
    let net = g.network_mut();
    net.absorb_grads(&tape, &fg)?;
    apply(adam, state, net.params_mut(), "generator parameter")?;
    Ok(adv_value)
}

/// Draws a generator batch without recording gradients.
fn fake_batch<R: Rng + ?Sized>(g: &mut Generator, n: usize, rng: &mut R) -> Result<Tensor, TrainError> {
    let z = sample_latents(rng, n, g.spec().latent_dim, None)?;
    Ok(g.generate(&z, Mode::Train)?)
}

/// One D update on real + fresh fakes, then one G update on another fresh
/// latent batch of the same size.
pub fn train_step<R: Rng + ?Sized>(
    g: &mut Generator,
    d: &mut Discriminator,
    adam_g: &mut AdamState,
    adam_d: &mut AdamState,
    real: &Tensor,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<StepMetrics, TrainError> {
    let n = match real.shape() {
        [n, ..] if *n > 0 => *n,
        _ => return Err(TrainError::EmptyDataset),
    };
    let fake = fake_batch(g, n, rng)?;
    let (d_loss, d_real_mean, d_fake_mean) = discriminator_step(d, &config.adam_d(), adam_d, real, &fake)?;
    let z = sample_latents(rng, n, g.spec().latent_dim, None)?.to_tensor();
    let g_loss = generator_step(g, d, &config.adam_g(), adam_g, &z, config.objective, config.ortho_beta)?;
    let m = StepMetrics {
        d_loss,
        g_loss,
        d_real_mean,
        d_fake_mean,
    };
    if !m.is_finite() {
        return Err(non_finite("step metric"));
    }
    Ok(m)
}
