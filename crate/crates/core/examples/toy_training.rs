//! Adversarial training on a rendered two-class shape corpus at 32×32,
//! printing per-iteration losses and writing sample grids.
//!
//! `cargo run --release --example toy_training -- [iterations] [out-dir]`

use petgan::data::synthetic::shape_image_set;
use petgan::train::{Budget, Preset, TrainConfig, TrainOutputs, Trainer};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let out = args.next().unwrap_or_else(|| "toy-run".into());

    let (data, _labels) = shape_image_set(256, 32, 0);
    let mut config = TrainConfig::dcgan(Preset::Dcgan32);
    config.base_channels = 8;
    config.latent_dim = 32;
    config.batch_size = 32;
    config.budget = Budget::Iterations(iterations);
    config.seed = 7;

    let mut outputs = TrainOutputs::in_dir(&out);
    outputs.sample_every = Some(iterations.div_ceil(4).max(1));
    let mut trainer = Trainer::new(config)?;
    let report = trainer.run(&data, &outputs)?;
    for (i, s) in report.steps.iter().enumerate().step_by(10) {
        println!(
            "iter {:>4}  d_loss {:.4}  g_loss {:.4}  D(real) {:.3}  D(fake) {:.3}",
            i + 1,
            s.d_loss,
            s.g_loss,
            s.d_real_mean,
            s.d_fake_mean
        );
    }
    println!("checkpoint id {}, artifacts in {out}/", trainer.checkpoint().id());
    Ok(())
}
