use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{Checkpoint, RngState};
use super::step::{train_step, StepMetrics};
use super::{AdamState, Budget, TrainConfig, TrainError};
use crate::gan::{truncated_sample, Discriminator, Generator, Mode};
use crate::imaging;
use crate::tensor::Tensor;

/// Stream of the training RNG; parameter init uses the default stream.
const TRAIN_STREAM: u64 = 1;
/// Offset applied to the run seed for the fixed preview latents.
const PREVIEW_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Normalized images held contiguously as N×3×R×R.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    resolution: usize,
    data: Vec<f64>,
}

impl ImageSet {
    pub fn new(resolution: usize, data: Vec<f64>) -> Result<Self, TrainError> {
        let len = 3 * resolution * resolution;
        if resolution == 0 || data.len() % len != 0 {
            return Err(TrainError::ShapeMismatch(format!(
                "{} values do not form whole 3×{resolution}×{resolution} images",
                data.len()
            )));
        }
        Ok(Self { resolution, data })
    }

    /// Stacks single images given as 3×R×R or 1×3×R×R tensors.
    pub fn from_images(resolution: usize, images: &[Tensor]) -> Result<Self, TrainError> {
        let mut data = Vec::new();
        for t in images {
            let ok = matches!(t.shape(), [3, h, w] | [1, 3, h, w] if *h == resolution && *w == resolution);
            if !ok {
                return Err(TrainError::ShapeMismatch(format!(
                    "expected 3×{resolution}×{resolution} image, got {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        Self::new(resolution, data)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.data.len() / (3 * self.resolution * self.resolution)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = 3 * self.resolution * self.resolution;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * 3 * self.resolution * self.resolution);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let r = self.resolution;
        Tensor::new([indices.len(), 3, r, r], data).expect("whole images")
    }
}

/// Mean step metrics over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepMetrics>,
}

impl TrainReport {
    /// One row per epoch. Without `wall_clock` the timing column is written
    /// as 0 so identical runs produce identical files.
    pub fn to_csv(&self, wall_clock: bool) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.epochs {
            let mut row = *row;
            if !wall_clock {
                row.wall_seconds = 0.0;
            }
            w.serialize(row).expect("in-memory CSV");
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "d_loss", "g_loss", "d_real_mean", "d_fake_mean", "wall_seconds"])
                .expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }
}

/// Where periodic artifacts go. Nothing is written without `dir`.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
    /// Also write a sample grid every this many iterations.
    pub sample_every: Option<u64>,
    pub preview_count: usize,
    pub checkpoint_every_epoch: bool,
    pub wall_clock: bool,
}

impl TrainOutputs {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            sample_every: None,
            preview_count: 16,
            checkpoint_every_epoch: true,
            wall_clock: false,
        }
    }
}

/// Complete mutable training state: both players, both optimizers, the RNG
/// and the progress counters.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    generator: Generator,
    discriminator: Discriminator,
    adam_g: AdamState,
    adam_d: AdamState,
    rng: ChaCha8Rng,
    epoch: u64,
    iteration: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let generator = Generator::build(config.generator_spec(), config.seed)?;
        let discriminator = Discriminator::build(config.discriminator_spec(), config.seed.wrapping_add(1))?;
        let adam_g = AdamState::for_params(generator.network().params());
        let adam_d = AdamState::for_params(discriminator.network().params());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Self {
            config,
            generator,
            discriminator,
            adam_g,
            adam_d,
            rng,
            epoch: 0,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Generator {
        &mut self.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn discriminator_mut(&mut self) -> &mut Discriminator {
        &mut self.discriminator
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Replaces the stopping rule, e.g. to extend a resumed run.
    pub fn set_budget(&mut self, budget: Budget) {
        self.config.budget = budget;
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = self.generator.network().named_state("g");
        tensors.extend(self.discriminator.network().named_state("d"));
        for (name, st) in [("adam_g", &self.adam_g), ("adam_d", &self.adam_d)] {
            for (i, (m, v)) in st.m.iter().zip(&st.v).enumerate() {
                tensors.push((format!("{name}.m.{i}"), Tensor::new([m.len()], m.clone()).expect("moment")));
                tensors.push((format!("{name}.v.{i}"), Tensor::new([v.len()], v.clone()).expect("moment")));
            }
        }
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            iteration: self.iteration,
            adam_g_t: self.adam_g.t,
            adam_d_t: self.adam_d.t,
            tensors,
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let mut t = Self::new(ck.config.clone())?;
        let mut lookup = |name: &str| ck.tensor(name).cloned();
        let malformed = |e: String| TrainError::Checkpoint(super::CheckpointError::Malformed(e));
        t.generator.network_mut().load_named_state("g", &mut lookup).map_err(malformed)?;
        t.discriminator.network_mut().load_named_state("d", &mut lookup).map_err(malformed)?;
        for (name, st, step) in [("adam_g", &mut t.adam_g, ck.adam_g_t), ("adam_d", &mut t.adam_d, ck.adam_d_t)] {
            for (i, (m, v)) in st.m.iter_mut().zip(&mut st.v).enumerate() {
                for (kind, buf) in [("m", &mut *m), ("v", &mut *v)] {
                    let key = format!("{name}.{kind}.{i}");
                    let src = ck.tensor(&key).ok_or_else(|| malformed(format!("missing tensor {key}")))?;
                    if src.numel() != buf.len() {
                        return Err(malformed(format!("tensor {key} has {} values, expected {}", src.numel(), buf.len())));
                    }
                    buf.copy_from_slice(src.data());
                }
            }
            st.t = step;
        }
        t.rng = ck.rng.restore();
        t.epoch = ck.epoch;
        t.iteration = ck.iteration;
        Ok(t)
    }

    /// One D/G iteration on `real`.
    pub fn step(&mut self, real: &Tensor) -> Result<StepMetrics, TrainError> {
        let m = train_step(
            &mut self.generator,
            &mut self.discriminator,
            &mut self.adam_g,
            &mut self.adam_d,
            real,
            &self.config,
            &mut self.rng,
        )
        .map_err(|e| match e {
            TrainError::NonFinite { what, diagnostic, .. } => TrainError::NonFinite {
                what,
                iteration: self.iteration + 1,
                diagnostic,
            },
            other => other,
        })?;
        self.iteration += 1;
        Ok(m)
    }

    /// Fixed-latent preview batch in inference mode.
    pub fn preview(&mut self, count: usize) -> Result<Tensor, TrainError> {
        let z = truncated_sample(
            count,
            self.config.latent_dim,
            self.config.truncation_tau,
            self.config.seed.wrapping_add(PREVIEW_SEED_OFFSET),
        )?;
        Ok(self.generator.generate(&z, Mode::Eval)?)
    }

    fn finished(&self) -> bool {
        match self.config.budget {
            Budget::Epochs(n) => self.epoch >= n,
            Budget::Iterations(n) => self.iteration >= n,
        }
    }

    /// Runs until the budget is spent. Each epoch visits the set once in a
    /// seeded permutation; an iteration budget may end the last epoch early,
    /// which still counts as a completed epoch.
    pub fn run(&mut self, data: &ImageSet, outputs: &TrainOutputs) -> Result<TrainReport, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if data.resolution() != self.config.preset.resolution() {
            return Err(TrainError::ShapeMismatch(format!(
                "preset {} trains on {}×{} images, dataset holds {}×{}",
                self.config.preset.name(),
                self.config.preset.resolution(),
                self.config.preset.resolution(),
                data.resolution(),
                data.resolution()
            )));
        }
        let mut report = TrainReport::default();
        while !self.finished() {
            let started = Instant::now();
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut self.rng);
            let mut steps = Vec::new();
            for chunk in order.chunks(self.config.batch_size) {
                if let Budget::Iterations(n) = self.config.budget {
                    if self.iteration >= n {
                        break;
                    }
                }
                let m = match self.step(&data.batch(chunk)) {
                    Ok(m) => m,
                    Err(e) => return Err(self.with_diagnostic(e, outputs)),
                };
                steps.push(m);
                if let (Some(every), Some(dir)) = (outputs.sample_every, &outputs.dir) {
                    if every > 0 && self.iteration % every == 0 {
                        let name = format!("iter-{:06}.png", self.iteration);
                        self.write_grid(&dir.join("samples").join(name), outputs.preview_count)?;
                    }
                }
            }
            self.epoch += 1;
            let n = steps.len().max(1) as f64;
            let avg = |f: fn(&StepMetrics) -> f64| steps.iter().map(f).sum::<f64>() / n;
            report.epochs.push(EpochMetrics {
                epoch: self.epoch,
                d_loss: avg(|m| m.d_loss),
                g_loss: avg(|m| m.g_loss),
                d_real_mean: avg(|m| m.d_real_mean),
                d_fake_mean: avg(|m| m.d_fake_mean),
                wall_seconds: started.elapsed().as_secs_f64(),
            });
            let last = report.epochs.last().expect("pushed above");
            tracing::info!(
                epoch = self.epoch,
                iteration = self.iteration,
                d_loss = last.d_loss,
                g_loss = last.g_loss,
                "epoch complete"
            );
            report.steps.extend(steps);
            if let Some(dir) = &outputs.dir {
                self.write_grid(&dir.join("samples").join(format!("epoch-{:04}.png", self.epoch)), outputs.preview_count)?;
                if outputs.checkpoint_every_epoch {
                    let path = dir.join("checkpoints").join(format!("epoch-{:04}.ckpt", self.epoch));
                    self.checkpoint().save(&path)?;
                }
                write_file(&dir.join("metrics.csv"), report.to_csv(outputs.wall_clock).as_bytes())?;
            }
        }
        Ok(report)
    }

    fn with_diagnostic(&self, e: TrainError, outputs: &TrainOutputs) -> TrainError {
        match (e, &outputs.dir) {
            (TrainError::NonFinite { what, iteration, .. }, Some(dir)) => {
                let path = dir.join("diagnostic.ckpt");
                let diagnostic = self.checkpoint().save(&path).ok().map(|_| path);
                TrainError::NonFinite {
                    what,
                    iteration,
                    diagnostic,
                }
            }
            (e, _) => e,
        }
    }

    fn write_grid(&mut self, path: &Path, count: usize) -> Result<(), TrainError> {
        if count == 0 {
            return Ok(());
        }
        let batch = self.preview(count)?;
        write_file(path, &imaging::encode_png(&imaging::grid(&batch)))
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        context: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

/// Trains a fresh model on `data` and returns the report and final state.
pub fn train(data: &ImageSet, config: TrainConfig, outputs: &TrainOutputs) -> Result<(TrainReport, Checkpoint), TrainError> {
    let mut trainer = Trainer::new(config)?;
    let report = trainer.run(data, outputs)?;
    Ok((report, trainer.checkpoint()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Preset;

    fn tiny_config() -> TrainConfig {
        let mut c = TrainConfig::dcgan(Preset::Dcgan32);
        c.base_channels = 4;
        c.latent_dim = 8;
        c.batch_size = 4;
        c.seed = 11;
        c
    }

    fn tiny_set(n: usize) -> ImageSet {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Tensor::randn([n, 3, 32, 32], 0.4, &mut rng);
        ImageSet::new(32, t.into_data().into_iter().map(|v: f64| v.tanh()).collect()).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut c = tiny_config();
        c.budget = Budget::Epochs(0);
        let (report, ck) = train(&tiny_set(4), c.clone(), &TrainOutputs::default()).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(ck.encode(), Trainer::new(c).unwrap().checkpoint().encode());
        assert_eq!(report.to_csv(false), "epoch,d_loss,g_loss,d_real_mean,d_fake_mean,wall_seconds\n");
    }

    #[test]
    fn empty_and_mismatched_data_rejected() {
        let c = tiny_config();
        assert!(matches!(
            train(&ImageSet::new(32, vec![]).unwrap(), c.clone(), &TrainOutputs::default()),
            Err(TrainError::EmptyDataset)
        ));
        let wrong = ImageSet::new(64, vec![0.0; 3 * 64 * 64]).unwrap();
        assert!(train(&wrong, c, &TrainOutputs::default()).is_err());
    }

    #[test]
    fn epoch_rows_and_iteration_budget() {
        let mut c = tiny_config();
        c.budget = Budget::Epochs(2);
        let (report, ck) = train(&tiny_set(10), c.clone(), &TrainOutputs::default()).unwrap();
        assert_eq!(report.epochs.len(), 2);
        // 10 images in batches of 4 → 3 steps per epoch
        assert_eq!((ck.epoch, ck.iteration), (2, 6));

        c.budget = Budget::Iterations(4);
        let (report, ck) = train(&tiny_set(10), c, &TrainOutputs::default()).unwrap();
        assert_eq!(report.steps.len(), 4);
        assert_eq!((ck.epoch, ck.iteration), (2, 4));
    }

    #[test]
    fn checkpoint_restores_trainer_exactly() {
        let mut c = tiny_config();
        c.budget = Budget::Epochs(1);
        let data = tiny_set(8);
        let mut a = Trainer::new(c).unwrap();
        a.run(&data, &TrainOutputs::default()).unwrap();
        let ck = a.checkpoint();
        let b = Trainer::from_checkpoint(&Checkpoint::decode(&ck.encode()).unwrap()).unwrap();
        assert_eq!(b.checkpoint().encode(), ck.encode());
    }

    #[test]
    fn outputs_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config();
        c.budget = Budget::Epochs(1);
        let mut out = TrainOutputs::in_dir(dir.path());
        out.sample_every = Some(1);
        out.preview_count = 4;
        train(&tiny_set(8), c, &out).unwrap();
        for f in ["metrics.csv", "samples/epoch-0001.png", "samples/iter-000002.png", "checkpoints/epoch-0001.ckpt"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
    }
}
