use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::inception::{inception_score, InceptionScore};
use super::MetricsError;
use crate::gan::{Layer, Mode, Network, LEAKY_SLOPE};
use crate::tensor::{softmax_rows, Activation, Tape, Tensor};
use crate::train::{Adam, AdamState, ImageSet};

const PREDICT_CHUNK: usize = 64;
const FORMAT: &str = "petgan-probe";

/// Maps an image batch to per-image class distributions.
pub trait ClassifierProbe {
    fn classes(&self) -> usize;

    /// Stable identifier recorded next to scores computed with this probe.
    fn id(&self) -> String;

    /// N×3×R×R in [−1, 1] → row-major N × C probabilities.
    fn predict(&self, images: &Tensor) -> Result<Vec<f64>, MetricsError>;
}

/// Inception Score of `images` as judged by `probe`.
pub fn probe_inception_score(
    probe: &dyn ClassifierProbe,
    images: &Tensor,
    splits: usize,
) -> Result<InceptionScore, MetricsError> {
    let probs = probe.predict(images)?;
    inception_score(&probs, probe.classes(), splits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeTraining {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// Two strided convolutions, a 1×1 convolution to class logits and global
/// average pooling, so a prediction does not depend on where a subject sits.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvProbe {
    resolution: usize,
    classes: usize,
    net: Network,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredProbe {
    format: String,
    resolution: usize,
    classes: usize,
    tensors: Vec<StoredTensor>,
}

impl ConvProbe {
    pub fn new(resolution: usize, classes: usize, seed: u64) -> Result<Self, MetricsError> {
        if resolution < 4 || resolution % 4 != 0 || classes < 2 {
            return Err(MetricsError::Probe(format!(
                "need a resolution divisible by 4 and at least 2 classes, got {resolution} and {classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = || Layer::Act(Activation::LeakyRelu(LEAKY_SLOPE));
        // He-scaled; the GAN init is too small for a short supervised run
        let mut conv = |c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize| Layer::Conv {
            weight: Tensor::randn([c_out, c_in, k, k], (2.0 / (c_in * k * k) as f64).sqrt(), &mut rng)
                .with_requires_grad(true),
            stride,
            padding,
        };
        let net = Network::new(vec![
            conv(3, 16, 4, 2, 1),
            act(),
            conv(16, 32, 4, 2, 1),
            act(),
            conv(32, classes, 1, 1, 0),
            Layer::GlobalAvgPool,
        ]);
        Ok(Self {
            resolution,
            classes,
            net,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    fn check(&self, images: &Tensor) -> Result<usize, MetricsError> {
        let r = self.resolution;
        match images.shape() {
            [n, 3, h, w] if *h == r && *w == r => Ok(*n),
            other => Err(MetricsError::Probe(format!("expected N×3×{r}×{r} images, got {other:?}"))),
        }
    }

    fn logits(&self, images: &Tensor) -> Result<Vec<f64>, MetricsError> {
        let mut tape = Tape::new();
        let x = tape.constant(images);
        let params = self.net.register_params(&mut tape, false);
        let (y, _) = self
            .net
            .forward_with_params(&mut tape, x, Mode::Eval, &params)
            .map_err(|e| MetricsError::Probe(e.to_string()))?;
        Ok(tape.value(y).to_vec())
    }

    /// Minimizes softmax cross-entropy with Adam; returns the mean loss of
    /// every epoch.
    pub fn train(&mut self, images: &ImageSet, labels: &[usize], cfg: &ProbeTraining) -> Result<Vec<f64>, MetricsError> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(MetricsError::Probe(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(l) = labels.iter().find(|l| **l >= self.classes) {
            return Err(MetricsError::Probe(format!("label {l} outside {} classes", self.classes)));
        }
        if images.resolution() != self.resolution || cfg.batch_size == 0 {
            return Err(MetricsError::Probe("resolution or batch size mismatch".into()));
        }
        let adam = Adam {
            lr: cfg.lr,
            beta1: 0.9,
            ..Adam::default()
        };
        let mut state = AdamState::for_params(self.net.params());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        let err = |e: crate::tensor::TensorError| MetricsError::Probe(e.to_string());
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let mut tape = Tape::new();
                let x = tape.constant(&images.batch(chunk));
                let f = self.net.forward(&mut tape, x, Mode::Eval, true).map_err(err)?;
                let loss = tape.softmax_cross_entropy(f.output, &batch_labels).map_err(err)?;
                total += tape.value(loss)[0] * chunk.len() as f64;
                tape.backward(loss).map_err(err)?;
                self.net.absorb_grads(&tape, &f).map_err(err)?;
                let mut params = self.net.params_mut();
                adam.step(&mut params, &mut state).map_err(|e| MetricsError::Probe(e.to_string()))?;
                params.iter_mut().for_each(|p| p.zero_grad());
            }
            history.push(total / images.len() as f64);
        }
        Ok(history)
    }

    /// Fraction of images whose most probable class is the label.
    pub fn accuracy(&self, images: &ImageSet, labels: &[usize]) -> Result<f64, MetricsError> {
        let idx: Vec<usize> = (0..images.len()).collect();
        let probs = self.predict(&images.batch(&idx))?;
        let correct = probs
            .chunks(self.classes)
            .zip(labels)
            .filter(|(p, l)| {
                let best = p
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
                best.0 == **l
            })
            .count();
        Ok(correct as f64 / labels.len().max(1) as f64)
    }

    fn to_json(&self) -> String {
        let stored = StoredProbe {
            format: FORMAT.into(),
            resolution: self.resolution,
            classes: self.classes,
            tensors: self
                .net
                .named_state("probe")
                .into_iter()
                .map(|(name, t)| StoredTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.into_data(),
                })
                .collect(),
        };
        serde_json::to_string(&stored).expect("probe serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_json()).map_err(|e| MetricsError::Probe(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Probe(format!("{}: {e}", path.display())))?;
        let stored: StoredProbe =
            serde_json::from_str(&text).map_err(|e| MetricsError::Probe(format!("{}: {e}", path.display())))?;
        if stored.format != FORMAT {
            return Err(MetricsError::Probe(format!("{} is not a probe file", path.display())));
        }
        let mut probe = Self::new(stored.resolution, stored.classes, 0)?;
        let mut lookup = |name: &str| {
            stored
                .tensors
                .iter()
                .find(|t| t.name == name)
                .and_then(|t| Tensor::new(t.shape.clone(), t.data.clone()).ok())
        };
        probe.net.load_named_state("probe", &mut lookup).map_err(MetricsError::Probe)?;
        Ok(probe)
    }
}

impl ClassifierProbe for ConvProbe {
    fn classes(&self) -> usize {
        self.classes
    }

    fn id(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        format!("conv-probe-{}", hex::encode(&digest.as_slice()[..6]))
    }

    fn predict(&self, images: &Tensor) -> Result<Vec<f64>, MetricsError> {
        let n = self.check(images)?;
        let per = 3 * self.resolution * self.resolution;
        let mut out = Vec::with_capacity(n * self.classes);
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let m = PREDICT_CHUNK.min(n - start);
            let chunk = Tensor::new(
                [m, 3, self.resolution, self.resolution],
                images.data()[start * per..(start + m) * per].to_vec(),
            )
            .expect("slice of a valid batch");
            out.extend(softmax_rows(&self.logits(&chunk)?, self.classes));
        }
        Ok(out)
    }
}
