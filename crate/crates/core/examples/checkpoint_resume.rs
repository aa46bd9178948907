//! Interrupting training and resuming from an encoded checkpoint reproduces
//! the uninterrupted run exactly.

use petgan::data::synthetic::shape_image_set;
use petgan::train::{Budget, Checkpoint, Preset, TrainConfig, TrainOutputs, Trainer};

fn config(epochs: u64) -> TrainConfig {
    let mut c = TrainConfig::dcgan(Preset::Dcgan32);
    c.base_channels = 4;
    c.latent_dim = 16;
    c.batch_size = 8;
    c.budget = Budget::Epochs(epochs);
    c.seed = 5;
    c
}

fn main() -> anyhow::Result<()> {
    let (data, _) = shape_image_set(32, 32, 1);
    let quiet = TrainOutputs::default();

    let mut straight = Trainer::new(config(2))?;
    let full = straight.run(&data, &quiet)?;

    let mut first = Trainer::new(config(1))?;
    first.run(&data, &quiet)?;
    let bytes = first.checkpoint().encode();
    println!("epoch-1 checkpoint: {} bytes, id {}", bytes.len(), first.checkpoint().id());

    let mut resumed = Trainer::from_checkpoint(&Checkpoint::decode(&bytes)?)?;
    resumed.set_budget(Budget::Epochs(2));
    let tail = resumed.run(&data, &quiet)?;

    let (mut a, mut b) = (full.epochs[1], tail.epochs[0]);
    (a.wall_seconds, b.wall_seconds) = (0.0, 0.0);
    println!("uninterrupted epoch 2: {a:?}");
    println!("resumed epoch 2:       {b:?}");
    let same = straight.checkpoint().encode() == resumed.checkpoint().encode();
    println!("final checkpoints identical: {same}");
    anyhow::ensure!(same && a == b);
    Ok(())
}
