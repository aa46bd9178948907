//! Inception Score of closed-form distributions, then of shape images scored
//! by a small convolutional probe trained on the two shape classes.

use petgan::data::synthetic::shape_image_set;
use petgan::metrics::{inception_score, probe_inception_score, ConvProbe, ProbeTraining};

fn main() -> anyhow::Result<()> {
    let uniform = vec![0.25; 4 * 4];
    let one_hot: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
    println!("uniform rows      IS {:.4}", inception_score(&uniform, 4, 1)?.mean);
    println!("one-hot cover     IS {:.4}", inception_score(&one_hot, 4, 1)?.mean);
    println!("[[.9,.1],[.1,.9]] IS {:.4}", inception_score(&[0.9, 0.1, 0.1, 0.9], 2, 1)?.mean);

    let (train, labels) = shape_image_set(256, 32, 0);
    let mut probe = ConvProbe::new(32, 2, 0)?;
    let losses = probe.train(&train, &labels, &ProbeTraining::default())?;
    println!("probe loss {:.4} → {:.4}", losses[0], losses[losses.len() - 1]);

    let (test, test_labels) = shape_image_set(128, 32, 99);
    println!("probe accuracy on held-out shapes {:.3}", probe.accuracy(&test, &test_labels)?);
    let is = probe_inception_score(&probe, &test.batch(&(0..test.len()).collect::<Vec<_>>()), 1)?;
    println!("probe IS of real shapes {:.4} (upper bound 2)", is.mean);
    Ok(())
}
