use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latent::LatentBatch;
use super::network::{Forward, Layer, Mode, Network};
use super::GanError;
use crate::tensor::{Activation, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const SUPPORTED_RESOLUTIONS: [usize; 2] = [32, 64];

fn channel_multipliers(resolution: usize) -> Result<&'static [usize], GanError> {
    match resolution {
        32 => Ok(&[4, 2, 1]),
        64 => Ok(&[8, 4, 2, 1]),
        other => Err(GanError::UnsupportedResolution(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub base_channels: usize,
    pub output_resolution: usize,
}

impl GeneratorSpec {
    pub fn dcgan(output_resolution: usize) -> Self {
        Self {
            latent_dim: 100,
            base_channels: 64,
            output_resolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub input_resolution: usize,
    pub base_channels: usize,
}

impl DiscriminatorSpec {
    pub fn dcgan(input_resolution: usize) -> Self {
        Self {
            input_resolution,
            base_channels: 64,
        }
    }
}

/// Transposed-convolution generator: latent → 4×4 → … → R×R, tanh head.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    spec: GeneratorSpec,
    net: Network,
}

impl Generator {
    pub fn build(spec: GeneratorSpec, seed: u64) -> Result<Self, GanError> {
        let mults = channel_multipliers(spec.output_resolution)?;
        if spec.latent_dim == 0 || spec.base_channels == 0 {
            return Err(GanError::InvalidSpec("latent_dim and base_channels must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = spec.base_channels;
        let mut layers = Vec::new();
        let mut prev = spec.latent_dim;
        for (i, &m) in mults.iter().enumerate() {
            let (stride, padding) = if i == 0 { (1, 0) } else { (2, 1) };
            layers.push(Layer::conv_transpose(prev, b * m, 4, stride, padding, &mut rng));
            layers.push(Layer::BatchNorm(super::network::BatchNorm2d::new(b * m)));
            layers.push(Layer::Act(Activation::Relu));
            prev = b * m;
        }
        layers.push(Layer::conv_transpose(prev, 3, 4, 2, 1, &mut rng));
        layers.push(Layer::Act(Activation::Tanh));
        Ok(Self {
            spec,
            net: Network::new(layers),
        })
    }

    pub fn spec(&self) -> GeneratorSpec {
        self.spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    fn latent_input(&self, tape: &mut Tape, z: Var) -> Result<Var, GanError> {
        let shape = tape.shape(z).to_vec();
        let n = match shape.as_slice() {
            [n, d] if *d == self.spec.latent_dim => *n,
            [n, d, 1, 1] if *d == self.spec.latent_dim => *n,
            _ => {
                return Err(GanError::ShapeMismatch(format!(
                    "generator expects latents of width {}, got shape {shape:?}",
                    self.spec.latent_dim
                )))
            }
        };
        Ok(tape.reshape(z, [n, self.spec.latent_dim, 1, 1])?)
    }

    /// Records G(z) on the tape; the output is N×3×R×R in [−1, 1].
    pub fn forward(&mut self, tape: &mut Tape, z: Var, mode: Mode, trainable: bool) -> Result<Forward, GanError> {
        let z4 = self.latent_input(tape, z)?;
        Ok(self.net.forward(tape, z4, mode, trainable)?)
    }

    /// Side-effect free forward against caller-registered parameter handles.
    pub fn forward_with_params(&self, tape: &mut Tape, z: Var, mode: Mode, params: &[Var]) -> Result<Var, GanError> {
        let z4 = self.latent_input(tape, z)?;
        Ok(self.net.forward_with_params(tape, z4, mode, params)?.0)
    }

    /// Convenience inference path returning the image batch as a tensor.
    pub fn generate(&mut self, latents: &LatentBatch, mode: Mode) -> Result<Tensor, GanError> {
        let mut tape = Tape::new();
        let z = tape.constant(&latents.to_tensor());
        let f = self.forward(&mut tape, z, mode, false)?;
        Ok(tape.tensor(f.output))
    }
}

/// Strided-convolution discriminator with a sigmoid score per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    net: Network,
}

impl Discriminator {
    pub fn build(spec: DiscriminatorSpec, seed: u64) -> Result<Self, GanError> {
        let mults = channel_multipliers(spec.input_resolution)?;
        if spec.base_channels == 0 {
            return Err(GanError::InvalidSpec("base_channels must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = spec.base_channels;
        let mut layers = Vec::new();
        let mut prev = 3;
        for (i, &m) in mults.iter().rev().enumerate() {
            layers.push(Layer::conv(prev, b * m, 4, 2, 1, &mut rng));
            if i > 0 {
                layers.push(Layer::BatchNorm(super::network::BatchNorm2d::new(b * m)));
            }
            layers.push(Layer::Act(Activation::LeakyRelu(LEAKY_SLOPE)));
            prev = b * m;
        }
        layers.push(Layer::conv(prev, 1, 4, 1, 0, &mut rng));
        layers.push(Layer::Flatten);
        layers.push(Layer::Act(Activation::Sigmoid));
        Ok(Self {
            spec,
            net: Network::new(layers),
        })
    }

    pub fn spec(&self) -> DiscriminatorSpec {
        self.spec
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<(), GanError> {
        let r = self.spec.input_resolution;
        match tape.shape(x) {
            [_, 3, h, w] if *h == r && *w == r => {}
            other => {
                return Err(GanError::ResolutionMismatch {
                    expected: r,
                    shape: other.to_vec(),
                })
            }
        }
        Ok(())
    }

    /// Records D(x) on the tape; the output holds one probability per image.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode, trainable: bool) -> Result<Forward, GanError> {
        self.check_input(tape, x)?;
        Ok(self.net.forward(tape, x, mode, trainable)?)
    }

    /// Side-effect free forward against caller-registered parameter handles.
    pub fn forward_with_params(&self, tape: &mut Tape, x: Var, mode: Mode, params: &[Var]) -> Result<Var, GanError> {
        self.check_input(tape, x)?;
        Ok(self.net.forward_with_params(tape, x, mode, params)?.0)
    }

    pub fn score(&mut self, images: &Tensor, mode: Mode) -> Result<Vec<f64>, GanError> {
        let mut tape = Tape::new();
        let x = tape.constant(images);
        let f = self.forward(&mut tape, x, mode, false)?;
        Ok(tape.value(f.output).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::latent::truncated_sample;
    use crate::tensor::grad_check_sampled;

    #[test]
    fn generator_shapes_and_range() {
        let mut g = Generator::build(GeneratorSpec::dcgan(64), 1).unwrap();
        let z = truncated_sample(2, 100, None, 3).unwrap();
        let out = g.generate(&z, Mode::Train).unwrap();
        assert_eq!(out.shape(), &[2, 3, 64, 64]);
        assert!(out.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn unsupported_resolution() {
        assert!(matches!(
            Generator::build(GeneratorSpec::dcgan(128), 0),
            Err(GanError::UnsupportedResolution(128))
        ));
    }

    #[test]
    fn dcgan64_parameter_count() {
        // Layer-by-layer: transposed convs 100·512·16, 512·256·16, 256·128·16,
        // 128·64·16, 64·3·16 plus (γ, β) for 512+256+128+64 channels.
        let convs = 100 * 512 * 16 + 512 * 256 * 16 + 256 * 128 * 16 + 128 * 64 * 16 + 64 * 3 * 16;
        let norms = 2 * (512 + 256 + 128 + 64);
        assert_eq!(convs + norms, 3_576_704);
        let g = Generator::build(GeneratorSpec::dcgan(64), 0).unwrap();
        assert_eq!(g.network().param_count(), 3_576_704);
    }

    #[test]
    fn init_statistics() {
        let g = Generator::build(GeneratorSpec::dcgan(32), 9).unwrap();
        let w = g.network().params()[0];
        let n = w.numel() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-3);
        assert!((std - 0.02).abs() < 1e-3);
    }

    #[test]
    fn discriminator_scores_are_probabilities() {
        let mut d = Discriminator::build(DiscriminatorSpec::dcgan(64), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = Tensor::randn([4, 3, 64, 64], 0.5, &mut rng);
        // duplicate image 0 into slot 3
        let plane = 3 * 64 * 64;
        let first = x.data()[..plane].to_vec();
        x.data_mut()[3 * plane..].copy_from_slice(&first);
        let s = d.score(&x, Mode::Train).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(s[0], s[3]);
    }

    #[test]
    fn discriminator_rejects_wrong_resolution() {
        let mut d = Discriminator::build(DiscriminatorSpec::dcgan(32), 2).unwrap();
        let x = Tensor::zeros([2, 3, 64, 64]);
        assert!(matches!(d.score(&x, Mode::Train), Err(GanError::ResolutionMismatch { .. })));
    }

    fn weighted_sum(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var, crate::tensor::TensorError> {
        let w = tape.constant(weights);
        let p = tape.mul(y, w)?;
        Ok(tape.sum(p))
    }

    #[test]
    fn small_generator_gradients() {
        let spec = GeneratorSpec {
            latent_dim: 5,
            base_channels: 2,
            output_resolution: 32,
        };
        let g = Generator::build(spec, 3).unwrap();
        let z = truncated_sample(2, 5, None, 8).unwrap().to_tensor();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let weights = Tensor::randn([2, 3, 32, 32], 1.0, &mut rng);
        let mut params: Vec<Tensor> = g.network().params().into_iter().cloned().collect();
        let err = grad_check_sampled(&mut params, 1e-6, 24, |tape, vars| {
            let zv = tape.constant(&z);
            let y = g.forward_with_params(tape, zv, Mode::Train, vars).map_err(GanError::into_tensor)?;
            weighted_sum(tape, y, &weights)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
