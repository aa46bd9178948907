//! Reverse-mode gradients checked against central differences on a small
//! conv → batch-norm → leaky-ReLU → transposed-conv chain.

use petgan::tensor::{grad_check, Activation, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = vec![
        Tensor::randn([2, 2, 6, 6], 1.0, &mut rng),
        Tensor::randn([3, 2, 4, 4], 0.5, &mut rng),
        Tensor::randn([3], 0.5, &mut rng),
        Tensor::randn([3], 0.5, &mut rng),
        Tensor::randn([3, 2, 4, 4], 0.5, &mut rng),
    ];
    let weights = Tensor::randn([2, 2, 6, 6], 1.0, &mut rng);

    let err = grad_check(&mut params, 1e-6, |tape, v| {
        let y = tape.conv2d(v[0], v[1], 2, 1)?;
        let y = tape.batch_norm2d(y, v[2], v[3], 1e-5)?.0;
        let y = tape.activation(y, Activation::LeakyRelu(0.2))?;
        let y = tape.conv_transpose2d(y, v[4], 2, 1)?;
        let w = tape.constant(&weights);
        let y = tape.mul(y, w)?;
        Ok(tape.sum(y))
    })?;
    println!("max relative gradient error: {err:.3e}");
    anyhow::ensure!(err < 1e-4, "gradient check failed");
    Ok(())
}
