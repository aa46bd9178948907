use super::{Result, Tape, Tensor, Var};

/// Compares tape gradients of `f` against central differences for every entry
/// of every tensor in `params`, returning the largest relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// `f` must be deterministic and return a scalar.
pub fn grad_check<F>(params: &mut [Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_sampled(params, eps, usize::MAX, f)
}

/// Like [`grad_check`] but probes at most `max_per_tensor` evenly spaced
/// entries of each tensor.
pub fn grad_check_sampled<F>(params: &mut [Tensor], eps: f64, max_per_tensor: usize, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(super::TensorError::InvalidArgument {
            op: "grad_check",
            reason: format!("eps must lie in (0, 1e-2], got {eps}"),
        });
    }
    if params.is_empty() {
        return Ok(0.0);
    }
    let eval = |params: &[Tensor], with_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .map(|p| {
                if with_grad {
                    tape.leaf(&p.clone().with_requires_grad(true))
                } else {
                    tape.constant(p)
                }
            })
            .collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss)[0];
        let mut grads = Vec::new();
        if with_grad {
            tape.backward(loss)?;
            for (v, p) in vars.iter().zip(params) {
                grads.push(
                    tape.grad(*v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; p.numel()]),
                );
            }
        }
        Ok((value, grads))
    };

    let (_, analytic) = eval(params, true)?;
    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        let n = params[p].numel();
        let step = n.div_ceil(max_per_tensor.max(1)).max(1);
        for i in (0..n).step_by(step) {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + eps;
            let (plus, _) = eval(params, false)?;
            params[p].data_mut()[i] = orig - eps;
            let (minus, _) = eval(params, false)?;
            params[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p][i];
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
