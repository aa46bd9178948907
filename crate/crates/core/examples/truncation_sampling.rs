//! Sampling a briefly trained generator with and without latent truncation;
//! tighter thresholds give less varied images.

use petgan::data::synthetic::shape_image_set;
use petgan::train::{generate_samples, train, Budget, Preset, TrainConfig, TrainOutputs};

fn pixel_variance(images: &[f64], n: usize) -> f64 {
    let per = images.len() / n;
    let mut total = 0.0;
    for p in 0..per {
        let mean = (0..n).map(|i| images[i * per + p]).sum::<f64>() / n as f64;
        total += (0..n).map(|i| (images[i * per + p] - mean).powi(2)).sum::<f64>() / n as f64;
    }
    total / per as f64
}

fn main() -> anyhow::Result<()> {
    let (data, _) = shape_image_set(64, 32, 2);
    let mut config = TrainConfig::dcgan(Preset::Dcgan32);
    config.base_channels = 8;
    config.latent_dim = 32;
    config.batch_size = 16;
    config.budget = Budget::Iterations(40);
    let (_, checkpoint) = train(&data, config, &TrainOutputs::default())?;

    for tau in [None, Some(2.0), Some(1.0), Some(0.5), Some(0.05)] {
        let s = generate_samples(&checkpoint, 64, tau, 11)?;
        println!("tau {tau:>9?}: pixel variance across batch {:.5}", pixel_variance(s.images.data(), s.len()));
    }
    let dir = tempfile::tempdir()?;
    let written = generate_samples(&checkpoint, 16, Some(0.5), 11)?.write_to(dir.path())?;
    println!("wrote {} samples, first {} sha256 {}", written.len(), written[0].file.display(), &written[0].sha256[..16]);
    Ok(())
}
