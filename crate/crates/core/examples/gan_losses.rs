//! Adversarial objectives, the orthogonal penalty and truncated latents.

use petgan::gan::{
    discriminator_loss, generator_loss, orthogonal_regularization, truncated_sample, value_function,
};
use petgan::tensor::Tensor;

fn main() -> anyhow::Result<()> {
    println!("V(D,G) at D=0.5 everywhere   {:.6}", value_function(&[0.5], &[0.5])?);
    println!("discriminator loss (0.9,0.2)  {:.6}", discriminator_loss(&[0.9], &[0.2])?);
    println!("generator loss at D=0.5       {:.6}", generator_loss(&[0.5])?);

    let w = Tensor::new([2, 2], vec![1.0, 1.0, 0.0, 1.0])?;
    println!("orthogonal penalty [[1,1],[0,1]]  {}", orthogonal_regularization(&w, 1.0)?);
    let eye = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0])?;
    println!("orthogonal penalty identity       {}", orthogonal_regularization(&eye, 1.0)?);

    for tau in [None, Some(2.0), Some(1.0), Some(0.5)] {
        let z = truncated_sample(20_000, 5, tau, 3)?;
        let n = z.values.len() as f64;
        let var = z.values.iter().map(|v| v * v).sum::<f64>() / n;
        let max = z.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        println!("tau {tau:>9?}: variance {var:.4}, max |z| {max:.3}");
    }
    Ok(())
}
