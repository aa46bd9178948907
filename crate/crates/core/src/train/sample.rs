use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trainer::write_file;
use super::{Checkpoint, CheckpointError, TrainError};
use crate::gan::{sample_latents, Generator, Mode};
use crate::imaging;
use crate::tensor::Tensor;

/// Largest number of images pushed through the generator at once.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub index: usize,
    pub checkpoint_id: String,
    pub tau: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSamples {
    /// N×3×R×R in [−1, 1].
    pub images: Tensor,
    pub provenance: Vec<SampleProvenance>,
}

/// A written sample: its file, provenance and SHA-256 of the PNG bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrittenSample {
    pub file: PathBuf,
    pub sha256: String,
    #[serde(flatten)]
    pub provenance: SampleProvenance,
}

/// Draws `n` images from the checkpoint's generator using running batch-norm
/// statistics, so each image depends only on its own latent.
pub fn generate_samples(checkpoint: &Checkpoint, n: usize, tau: Option<f64>, seed: u64) -> Result<GeneratedSamples, TrainError> {
    if n == 0 {
        return Err(TrainError::Config("sample count must be at least 1".into()));
    }
    let config = &checkpoint.config;
    let mut g = Generator::build(config.generator_spec(), 0)?;
    g.network_mut()
        .load_named_state("g", &mut |name| checkpoint.tensor(name).cloned())
        .map_err(CheckpointError::Malformed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut remaining = n;
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let z = sample_latents(&mut rng, m, config.latent_dim, tau)?;
        data.extend(g.generate(&z, Mode::Eval)?.into_data());
        remaining -= m;
    }
    let r = config.preset.resolution();
    let id = checkpoint.id();
    Ok(GeneratedSamples {
        images: Tensor::new([n, 3, r, r], data)?,
        provenance: (0..n)
            .map(|index| SampleProvenance {
                index,
                checkpoint_id: id.clone(),
                tau,
                seed,
            })
            .collect(),
    })
}

impl GeneratedSamples {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn png(&self, i: usize) -> Vec<u8> {
        imaging::encode_png(&imaging::batch_image(&self.images, i))
    }

    /// Writes `sample-NNNN.png` per image, `grid.png` and `samples.jsonl`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<WrittenSample>, TrainError> {
        let mut written = Vec::with_capacity(self.len());
        let mut index = String::new();
        for (i, prov) in self.provenance.iter().enumerate() {
            let bytes = self.png(i);
            let file = dir.join(format!("sample-{i:04}.png"));
            write_file(&file, &bytes)?;
            let w = WrittenSample {
                file,
                sha256: hex::encode(Sha256::digest(&bytes).as_slice()),
                provenance: prov.clone(),
            };
            index.push_str(&serde_json::to_string(&w).expect("provenance serializes"));
            index.push('\n');
            written.push(w);
        }
        write_file(&dir.join("grid.png"), &imaging::encode_png(&imaging::grid(&self.images)))?;
        write_file(&dir.join("samples.jsonl"), index.as_bytes())?;
        Ok(written)
    }
}
