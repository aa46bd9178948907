use rand::Rng;

use crate::tensor::{Activation, BatchStats, Tape, Tensor, TensorError, Var};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const INIT_STD: f64 = 0.02;

/// Whether batch norm uses batch statistics (and updates running ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full([channels], 1.0).with_requires_grad(true),
            beta: Tensor::zeros([channels]).with_requires_grad(true),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        weight: Tensor,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        weight: Tensor,
        stride: usize,
        padding: usize,
    },
    BatchNorm(BatchNorm2d),
    Act(Activation),
    /// Collapses everything after the batch axis.
    Flatten,
    /// Per-channel mean over the spatial axes.
    GlobalAvgPool,
}

impl Layer {
    pub fn conv<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        Layer::Conv {
            weight: Tensor::randn([c_out, c_in, k, k], INIT_STD, rng).with_requires_grad(true),
            stride,
            padding,
        }
    }

    pub fn conv_transpose<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Layer::ConvTranspose {
            weight: Tensor::randn([c_in, c_out, k, k], INIT_STD, rng).with_requires_grad(true),
            stride,
            padding,
        }
    }
}

/// An ordered stack of layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Output of [`Network::forward`]; `params` follows [`Network::params`] order.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Var,
    pub params: Vec<Var>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { weight, .. } | Layer::ConvTranspose { weight, .. } => out.push(weight),
                Layer::BatchNorm(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                Layer::Act(_) | Layer::Flatten | Layer::GlobalAvgPool => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { weight, .. } | Layer::ConvTranspose { weight, .. } => out.push(weight),
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                Layer::Act(_) | Layer::Flatten | Layer::GlobalAvgPool => {}
            }
        }
        out
    }

    /// Convolution weights, the matrices orthogonal regularization acts on.
    pub fn weight_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut idx = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv { .. } | Layer::ConvTranspose { .. } => {
                    out.push(idx);
                    idx += 1;
                }
                Layer::BatchNorm(_) => idx += 2,
                Layer::Act(_) | Layer::Flatten | Layer::GlobalAvgPool => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Named tensors for serialization: parameters and batch-norm buffers.
    pub fn named_state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { weight, .. } | Layer::ConvTranspose { weight, .. } => {
                    out.push((format!("{prefix}.{i}.weight"), weight.clone()));
                }
                Layer::BatchNorm(bn) => {
                    let c = bn.running_mean.len();
                    out.push((format!("{prefix}.{i}.gamma"), bn.gamma.clone()));
                    out.push((format!("{prefix}.{i}.beta"), bn.beta.clone()));
                    out.push((
                        format!("{prefix}.{i}.running_mean"),
                        Tensor::new([c], bn.running_mean.clone()).expect("channel buffer"),
                    ));
                    out.push((
                        format!("{prefix}.{i}.running_var"),
                        Tensor::new([c], bn.running_var.clone()).expect("channel buffer"),
                    ));
                }
                Layer::Act(_) | Layer::Flatten | Layer::GlobalAvgPool => {}
            }
        }
        out
    }

    /// Overwrites state from [`Network::named_state`] output; shapes must match.
    pub fn load_named_state(&mut self, prefix: &str, lookup: &mut dyn FnMut(&str) -> Option<Tensor>) -> Result<(), String> {
        let mut take = |name: String, expect: &[usize]| -> Result<Vec<f64>, String> {
            let t = lookup(&name).ok_or_else(|| format!("missing tensor {name}"))?;
            if t.shape() != expect {
                return Err(format!("tensor {name}: expected shape {expect:?}, found {:?}", t.shape()));
            }
            Ok(t.into_data())
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv { weight, .. } | Layer::ConvTranspose { weight, .. } => {
                    let data = take(format!("{prefix}.{i}.weight"), &weight.shape().to_vec())?;
                    weight.data_mut().copy_from_slice(&data);
                }
                Layer::BatchNorm(bn) => {
                    let c = bn.running_mean.len();
                    let g = take(format!("{prefix}.{i}.gamma"), &[c])?;
                    bn.gamma.data_mut().copy_from_slice(&g);
                    let b = take(format!("{prefix}.{i}.beta"), &[c])?;
                    bn.beta.data_mut().copy_from_slice(&b);
                    bn.running_mean = take(format!("{prefix}.{i}.running_mean"), &[c])?;
                    bn.running_var = take(format!("{prefix}.{i}.running_var"), &[c])?;
                }
                Layer::Act(_) | Layer::Flatten | Layer::GlobalAvgPool => {}
            }
        }
        Ok(())
    }

    /// Copies every parameter onto `tape`, as leaves when `trainable` and as
    /// constants otherwise.
    pub fn register_params(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| if trainable { tape.leaf(t) } else { tape.constant(t) })
            .collect()
    }

    /// Records the stack on `tape` against already registered parameter
    /// handles (in [`Network::params`] order). Returns the output and the
    /// batch statistics of every training-mode batch norm, in layer order.
    pub fn forward_with_params(
        &self,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
        params: &[Var],
    ) -> Result<(Var, Vec<BatchStats>), TensorError> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(TensorError::InvalidArgument {
                op: "network_forward",
                reason: format!("expected {expected} parameter handles, got {}", params.len()),
            });
        }
        let mut next = params.iter().copied();
        let mut stats = Vec::new();
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv { stride, padding, .. } => {
                    let k = next.next().expect("counted above");
                    tape.conv2d(x, k, *stride, *padding)?
                }
                Layer::ConvTranspose { stride, padding, .. } => {
                    let k = next.next().expect("counted above");
                    tape.conv_transpose2d(x, k, *stride, *padding)?
                }
                Layer::BatchNorm(bn) => {
                    let g = next.next().expect("counted above");
                    let b = next.next().expect("counted above");
                    match mode {
                        Mode::Train => {
                            let (y, s) = tape.batch_norm2d(x, g, b, BATCH_NORM_EPS)?;
                            stats.push(s);
                            y
                        }
                        Mode::Eval => tape.batch_norm2d_eval(
                            x,
                            g,
                            b,
                            &bn.running_mean,
                            &bn.running_var,
                            BATCH_NORM_EPS,
                        )?,
                    }
                }
                Layer::Act(kind) => tape.activation(x, *kind)?,
                Layer::Flatten => {
                    let shape = tape.shape(x);
                    let n = shape[0];
                    let rest = shape[1..].iter().product::<usize>();
                    let new_shape = if rest == 1 { vec![n] } else { vec![n, rest] };
                    tape.reshape(x, new_shape)?
                }
                Layer::GlobalAvgPool => tape.spatial_mean(x)?,
            };
        }
        Ok((x, stats))
    }

    /// Records the stack on `tape`; training mode also folds the batch
    /// statistics into the running estimates.
    pub fn forward(&mut self, tape: &mut Tape, input: Var, mode: Mode, trainable: bool) -> Result<Forward, TensorError> {
        let params = self.register_params(tape, trainable);
        let (output, stats) = self.forward_with_params(tape, input, mode, &params)?;
        let norms = self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        });
        for (bn, s) in norms.zip(&stats) {
            for (r, m) in bn.running_mean.iter_mut().zip(&s.mean) {
                *r = (1.0 - BATCH_NORM_MOMENTUM) * *r + BATCH_NORM_MOMENTUM * m;
            }
            for (r, v) in bn.running_var.iter_mut().zip(&s.var) {
                *r = (1.0 - BATCH_NORM_MOMENTUM) * *r + BATCH_NORM_MOMENTUM * v;
            }
        }
        Ok(Forward { output, params })
    }

    /// Folds tape gradients of a previous [`Network::forward`] into the parameters.
    pub fn absorb_grads(&mut self, tape: &Tape, forward: &Forward) -> Result<(), TensorError> {
        for (p, v) in self.params_mut().into_iter().zip(&forward.params) {
            if let Some(g) = tape.grad(*v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
            && self.layers.iter().all(|l| match l {
                Layer::BatchNorm(bn) => bn
                    .running_mean
                    .iter()
                    .chain(&bn.running_var)
                    .all(|v| v.is_finite()),
                _ => true,
            })
    }
}
