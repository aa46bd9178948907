//! Inner-product identity ⟨conv(x), y⟩ = ⟨x, conv_transpose(y)⟩ over random
//! shapes, strides and paddings.

use petgan::tensor::{conv_output_extent, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 100 {
        let (n, c_in, c_out) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let (k, stride, pad) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(0..3));
        let h = rng.random_range(k.max(2)..12);
        let w = rng.random_range(k.max(2)..12);
        let (Some(oh), Some(ow)) = (conv_output_extent(h, k, stride, pad), conv_output_extent(w, k, stride, pad)) else {
            continue;
        };
        if pad >= k {
            continue;
        }
        let x = Tensor::randn([n, c_in, h, w], 1.0, &mut rng);
        let kern = Tensor::randn([c_out, c_in, k, k], 1.0, &mut rng);
        let y = Tensor::randn([n, c_out, oh, ow], 1.0, &mut rng);

        let mut tape = Tape::new();
        let (xv, kv, yv) = (tape.constant(&x), tape.constant(&kern), tape.constant(&y));
        let ax = tape.conv2d(xv, kv, stride, pad)?;
        let aty = tape.conv_transpose2d(yv, kv, stride, pad)?;
        let lhs = tape.tensor(ax).dot(&y)?;
        let rhs = x.dot(&tape.tensor(aty))?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
        checked += 1;
    }
    println!("{checked} shapes, worst relative mismatch {worst:.3e}");
    anyhow::ensure!(worst < 1e-10);
    Ok(())
}
