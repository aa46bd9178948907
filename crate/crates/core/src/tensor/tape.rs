use super::kernels::{self, ConvGeom};
use super::{
    conv_output_extent, conv_transpose_output_extent, numel, Activation, Result, Tensor,
    TensorError,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the form folded into running estimates.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: usize,
        k: usize,
        geom: ConvGeom,
    },
    /// `geom` describes the forward convolution whose input gradient this is.
    ConvTranspose2d {
        x: usize,
        k: usize,
        geom: ConvGeom,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        channels: usize,
        plane: usize,
    },
    BatchNormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        channels: usize,
        plane: usize,
    },
    Act {
        x: usize,
        kind: Activation,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        rows: usize,
        inputs: usize,
        outputs: usize,
    },
    SpatialMean {
        x: usize,
        area: usize,
    },
    Reshape {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    AddScalar {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    LogClamped {
        x: usize,
        lo: f64,
        hi: f64,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
        classes: usize,
    },
    OrthoPenalty {
        w: usize,
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records operations in execution order; inputs always precede their users.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn add_into(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Copies `tensor` onto the tape; it receives gradients iff it requires them.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("tape node is well formed")
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn nchw(&self, op: &'static str, v: Var) -> Result<[usize; 4]> {
        match *self.shape(v) {
            [n, c, h, w] => Ok([n, c, h, w]),
            ref other => Err(TensorError::InvalidArgument {
                op,
                reason: format!("expected an NCHW tensor, got shape {other:?}"),
            }),
        }
    }

    /// Cross-correlation of an NCHW input with an OIKhKw kernel.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, c_in, h, w] = self.nchw("conv2d", x)?;
        let [c_out, k_in, kh, kw] = self.nchw("conv2d", k)?;
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            left: self.shape(x).to_vec(),
            right: self.shape(k).to_vec(),
        };
        if k_in != c_in {
            return Err(mismatch());
        }
        let oh = conv_output_extent(h, kh, stride, padding).ok_or_else(mismatch)?;
        let ow = conv_output_extent(w, kw, stride, padding).ok_or_else(mismatch)?;
        let geom = ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let value = kernels::conv2d_forward(&geom, self.value(x), self.value(k));
        let rg = self.rg(x.0) || self.rg(k.0);
        Ok(self.push(
            vec![n, c_out, oh, ow],
            value,
            Op::Conv2d { x: x.0, k: k.0, geom },
            rg,
        ))
    }

    /// Adjoint of [`Tape::conv2d`] for the same kernel, stride and padding.
    /// The kernel is laid out (input channels, output channels, Kh, Kw).
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, c_in, h, w] = self.nchw("conv_transpose2d", x)?;
        let [k_in, c_out, kh, kw] = self.nchw("conv_transpose2d", k)?;
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv_transpose2d",
            left: self.shape(x).to_vec(),
            right: self.shape(k).to_vec(),
        };
        if k_in != c_in || stride == 0 {
            return Err(mismatch());
        }
        let oh = conv_transpose_output_extent(h, kh, stride, padding).ok_or_else(mismatch)?;
        let ow = conv_transpose_output_extent(w, kw, stride, padding).ok_or_else(mismatch)?;
        // The forward convolution maps (c_out, oh, ow) back to (c_in, h, w).
        let geom = ConvGeom {
            n,
            c_in: c_out,
            h: oh,
            w: ow,
            c_out: c_in,
            kh,
            kw,
            stride,
            pad: padding,
            oh: h,
            ow: w,
        };
        let value = kernels::conv2d_input_grad(&geom, self.value(x), self.value(k));
        let rg = self.rg(x.0) || self.rg(k.0);
        Ok(self.push(
            vec![n, c_out, oh, ow],
            value,
            Op::ConvTranspose2d { x: x.0, k: k.0, geom },
            rg,
        ))
    }

    fn check_channel_params(&self, op: &'static str, x: Var, p: Var, channels: usize) -> Result<()> {
        if self.nodes[p.0].value.len() != channels {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(x).to_vec(),
                right: self.shape(p).to_vec(),
            });
        }
        Ok(())
    }

    /// Training-mode batch normalization with biased batch variance.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let [n, c, h, w] = self.nchw("batch_norm2d", x)?;
        self.check_channel_params("batch_norm2d", x, gamma, c)?;
        self.check_channel_params("batch_norm2d", x, beta, c)?;
        let plane = h * w;
        let count = n * plane;
        if count < 2 {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm2d",
                reason: format!(
                    "training statistics need at least 2 values per channel, got {count}"
                ),
            });
        }
        if !(eps > 0.0) {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm2d",
                reason: format!("epsilon must be positive, got {eps}"),
            });
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                s += xs[(ni * c + ch) * plane..][..plane].iter().sum::<f64>();
            }
            let m = s / count as f64;
            let mut sq = 0.0;
            for ni in 0..n {
                sq += xs[(ni * c + ch) * plane..][..plane]
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = sq / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * plane;
                for i in base..base + plane {
                    let xh = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let unbiased = var
            .iter()
            .map(|v| v * count as f64 / (count - 1) as f64)
            .collect();
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        let shape = self.shape(x).to_vec();
        let var_out = self.push(
            shape,
            out,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                channels: c,
                plane,
            },
            rg,
        );
        Ok((var_out, BatchStats { mean, var: unbiased }))
    }

    /// Inference-mode batch normalization against fixed statistics.
    pub fn batch_norm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let [n, c, h, w] = self.nchw("batch_norm2d", x)?;
        self.check_channel_params("batch_norm2d", x, gamma, c)?;
        self.check_channel_params("batch_norm2d", x, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm2d",
                reason: format!("running statistics must have {c} channels"),
            });
        }
        let plane = h * w;
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xs = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * plane;
                for i in base..base + plane {
                    let xh = (xs[i] - running_mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::BatchNormEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                channels: c,
                plane,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        kind.validate()?;
        let value: Vec<f64> = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(shape, value, Op::Act { x: x.0, kind }, rg))
    }

    /// y = x·wᵀ + b for x of shape (N, in) and w of shape (out, in).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, inputs) = match *self.shape(x) {
            [r, i] => (r, i),
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "linear",
                    reason: format!("input must be 2-D, got {:?}", self.shape(x)),
                })
            }
        };
        let outputs = match *self.shape(w) {
            [o, i] if i == inputs => o,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    left: self.shape(x).to_vec(),
                    right: self.shape(w).to_vec(),
                })
            }
        };
        if let Some(b) = b {
            if self.value(b).len() != outputs {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    left: self.shape(w).to_vec(),
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let (xs, ws) = (self.value(x), self.value(w));
        let bias = b.map(|b| self.value(b));
        let mut out = vec![0.0; rows * outputs];
        for r in 0..rows {
            let xr = &xs[r * inputs..(r + 1) * inputs];
            for o in 0..outputs {
                let wo = &ws[o * inputs..(o + 1) * inputs];
                let dot: f64 = xr.iter().zip(wo).map(|(a, b)| a * b).sum();
                out[r * outputs + o] = dot + bias.map_or(0.0, |bv| bv[o]);
            }
        }
        let rg = self.rg(x.0) || self.rg(w.0) || b.is_some_and(|b| self.rg(b.0));
        Ok(self.push(
            vec![rows, outputs],
            out,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                rows,
                inputs,
                outputs,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape,
            });
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(shape, value, Op::Reshape { x: x.0 }, rg))
    }

    /// Averages each channel over its spatial extent: N×C×H×W → N×C.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw("spatial_mean", x)?;
        let area = h * w;
        let value = self.value(x).chunks(area).map(|p| p.iter().sum::<f64>() / area as f64).collect();
        let rg = self.rg(x.0);
        Ok(self.push(vec![n, c], value, Op::SpatialMean { x: x.0, area }, rg))
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>, bool)> {
        self.same_shape(op_name, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((self.shape(a).to_vec(), value, self.rg(a.0) || self.rg(b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(shape, value, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(shape, value, Op::Sub { a: a.0, b: b.0 }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(shape, value, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).iter().map(|v| c * v).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        self.push(shape, value, Op::Scale { x: x.0, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        self.push(shape, value, Op::AddScalar { x: x.0 }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x.0);
        self.push(Vec::new(), vec![s], Op::Sum { x: x.0 }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x.0);
        self.push(Vec::new(), vec![m], Op::Mean { x: x.0 }, rg)
    }

    /// ln(clamp(x, lo, hi)); the gradient vanishes where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo > 0.0 && lo < hi) {
            return Err(TensorError::InvalidArgument {
                op: "log_clamped",
                reason: format!("need 0 < lo < hi, got [{lo}, {hi}]"),
            });
        }
        let value = self.value(x).iter().map(|v| v.clamp(lo, hi).ln()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(shape, value, Op::LogClamped { x: x.0, lo, hi }, rg))
    }

    /// Mean negative log-likelihood of `labels` under softmax(logits).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, classes) = match *self.shape(logits) {
            [r, c] => (r, c),
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "softmax_cross_entropy",
                    reason: format!("logits must be 2-D, got {:?}", self.shape(logits)),
                })
            }
        };
        if labels.len() != rows || labels.iter().any(|&l| l >= classes) {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                reason: format!("need {rows} labels below {classes}"),
            });
        }
        let probs = softmax_rows(self.value(logits), classes);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -probs[r * classes + l].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / rows as f64;
        let rg = self.rg(logits.0);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
                classes,
            },
            rg,
        ))
    }

    /// ‖WᵀW ⊙ (1 − I)‖²_F with W viewed as (leading extent) × (everything else).
    pub fn orthogonal_penalty(&mut self, w: Var) -> Result<Var> {
        let shape = self.shape(w);
        if shape.len() < 2 {
            return Err(TensorError::InvalidArgument {
                op: "orthogonal_penalty",
                reason: format!("weight must have rank >= 2, got {shape:?}"),
            });
        }
        let rows = shape[0];
        let cols = numel(&shape[1..]);
        let value = orthogonal_penalty_value(self.value(w), rows, cols);
        let rg = self.rg(w.0);
        Ok(self.push(Vec::new(), vec![value], Op::OrthoPenalty { w: w.0, rows, cols }, rg))
    }

    /// Reverse sweep from a scalar `loss`; leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (input, delta) in self.input_grads(i, &g) {
                if self.nodes[input].requires_grad {
                    add_into(&mut grads[input], delta);
                }
            }
        }
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if matches!(self.nodes[i].op, Op::Leaf) {
                    add_into(&mut self.nodes[i].grad, g);
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: usize| self.nodes[v].value.as_slice();
        let rg = |v: usize| self.nodes[v].requires_grad;
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, geom } => {
                if rg(*x) {
                    out.push((*x, kernels::conv2d_input_grad(geom, g, val(*k))));
                }
                if rg(*k) {
                    out.push((*k, kernels::conv2d_kernel_grad(geom, val(*x), g)));
                }
            }
            Op::ConvTranspose2d { x, k, geom } => {
                if rg(*x) {
                    out.push((*x, kernels::conv2d_forward(geom, g, val(*k))));
                }
                if rg(*k) {
                    out.push((*k, kernels::conv2d_kernel_grad(geom, g, val(*x))));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels,
                plane,
            } => {
                let (c, plane) = (*channels, *plane);
                let n = g.len() / (c * plane);
                let count = (n * plane) as f64;
                let gm = val(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ni in 0..n {
                    for ch in 0..c {
                        let base = (ni * c + ch) * plane;
                        for j in base..base + plane {
                            dgamma[ch] += g[j] * xhat[j];
                            dbeta[ch] += g[j];
                        }
                    }
                }
                if rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for ni in 0..n {
                        for ch in 0..c {
                            let base = (ni * c + ch) * plane;
                            let k = gm[ch] * inv_std[ch] / count;
                            for j in base..base + plane {
                                dx[j] = k * (count * g[j] - dbeta[ch] - xhat[j] * dgamma[ch]);
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                if rg(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if rg(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels,
                plane,
            } => {
                let (c, plane) = (*channels, *plane);
                let n = g.len() / (c * plane);
                let gm = val(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                for ni in 0..n {
                    for ch in 0..c {
                        let base = (ni * c + ch) * plane;
                        for j in base..base + plane {
                            dgamma[ch] += g[j] * xhat[j];
                            dbeta[ch] += g[j];
                            dx[j] = g[j] * gm[ch] * inv_std[ch];
                        }
                    }
                }
                if rg(*x) {
                    out.push((*x, dx));
                }
                if rg(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if rg(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            Op::Act { x, kind } => {
                let dx = g
                    .iter()
                    .zip(val(*x))
                    .zip(&node.value)
                    .map(|((gv, &xv), &yv)| gv * kind.derivative(xv, yv))
                    .collect();
                out.push((*x, dx));
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                inputs,
                outputs,
            } => {
                let (rows, inputs, outputs) = (*rows, *inputs, *outputs);
                if rg(*x) {
                    let ws = val(*w);
                    let mut dx = vec![0.0; rows * inputs];
                    for r in 0..rows {
                        let dxr = &mut dx[r * inputs..(r + 1) * inputs];
                        for o in 0..outputs {
                            let gv = g[r * outputs + o];
                            let wo = &ws[o * inputs..(o + 1) * inputs];
                            dxr.iter_mut().zip(wo).for_each(|(a, &b)| *a += gv * b);
                        }
                    }
                    out.push((*x, dx));
                }
                if rg(*w) {
                    let xs = val(*x);
                    let mut dw = vec![0.0; outputs * inputs];
                    for r in 0..rows {
                        let xr = &xs[r * inputs..(r + 1) * inputs];
                        for o in 0..outputs {
                            let gv = g[r * outputs + o];
                            let dwo = &mut dw[o * inputs..(o + 1) * inputs];
                            dwo.iter_mut().zip(xr).for_each(|(a, &b)| *a += gv * b);
                        }
                    }
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|&b| rg(b)) {
                    let mut db = vec![0.0; outputs];
                    for r in 0..rows {
                        db.iter_mut()
                            .zip(&g[r * outputs..(r + 1) * outputs])
                            .for_each(|(a, b)| *a += b);
                    }
                    out.push((b, db));
                }
            }
            Op::Reshape { x } | Op::AddScalar { x } => out.push((*x, g.to_vec())),
            Op::SpatialMean { x, area } => {
                let scale = 1.0 / *area as f64;
                out.push((*x, g.iter().flat_map(|v| std::iter::repeat_n(v * scale, *area)).collect()));
            }
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|v| -v).collect()));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                out.push((*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()));
                out.push((*b, g.iter().zip(av).map(|(g, a)| g * a).collect()));
            }
            Op::Scale { x, c } => out.push((*x, g.iter().map(|v| c * v).collect())),
            Op::Sum { x } => out.push((*x, vec![g[0]; val(*x).len()])),
            Op::Mean { x } => {
                let n = val(*x).len();
                out.push((*x, vec![g[0] / n as f64; n]));
            }
            Op::LogClamped { x, lo, hi } => {
                let dx = g
                    .iter()
                    .zip(val(*x))
                    .map(|(gv, &xv)| if xv > *lo && xv < *hi { gv / xv } else { 0.0 })
                    .collect();
                out.push((*x, dx));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                classes,
            } => {
                let rows = labels.len();
                let scale = g[0] / rows as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * classes + l] -= scale;
                }
                out.push((*logits, d));
            }
            Op::OrthoPenalty { w, rows, cols } => {
                let mut d = orthogonal_penalty_grad(val(*w), *rows, *cols);
                d.iter_mut().for_each(|v| *v *= g[0]);
                out.push((*w, d));
            }
        }
        out
    }
}

/// Row-wise softmax of a row-major batch × `classes` matrix.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut probs = vec![0.0; logits.len()];
    for (row, p) in logits.chunks(classes).zip(probs.chunks_mut(classes)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (pv, &l) in p.iter_mut().zip(row) {
            *pv = (l - max).exp();
            z += *pv;
        }
        p.iter_mut().for_each(|v| *v /= z);
    }
    probs
}

/// Gram matrix AᵀA of a row-major (rows × cols) matrix, or AAᵀ when `outer`.
fn gram(w: &[f64], rows: usize, cols: usize, outer: bool) -> Vec<f64> {
    if outer {
        let mut g = vec![0.0; rows * rows];
        for i in 0..rows {
            let wi = &w[i * cols..(i + 1) * cols];
            for j in i..rows {
                let wj = &w[j * cols..(j + 1) * cols];
                let d: f64 = wi.iter().zip(wj).map(|(a, b)| a * b).sum();
                g[i * rows + j] = d;
                g[j * rows + i] = d;
            }
        }
        g
    } else {
        let mut g = vec![0.0; cols * cols];
        for r in 0..rows {
            let wr = &w[r * cols..(r + 1) * cols];
            for i in 0..cols {
                let a = wr[i];
                let gi = &mut g[i * cols..(i + 1) * cols];
                gi.iter_mut().zip(wr).for_each(|(acc, &b)| *acc += a * b);
            }
        }
        g
    }
}

fn column_sq_norms(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut c = vec![0.0; cols];
    for r in 0..rows {
        c.iter_mut()
            .zip(&w[r * cols..(r + 1) * cols])
            .for_each(|(acc, v)| *acc += v * v);
    }
    c
}

/// When W is wide, WᵀW is large; ‖WᵀW‖²_F = ‖WWᵀ‖²_F and diag(WᵀW) holds the
/// squared column norms, so the penalty is computed from the small Gram matrix.
pub(crate) fn orthogonal_penalty_value(w: &[f64], rows: usize, cols: usize) -> f64 {
    if cols <= rows {
        let g = gram(w, rows, cols, false);
        let mut s = 0.0;
        for i in 0..cols {
            for j in 0..cols {
                if i != j {
                    s += g[i * cols + j] * g[i * cols + j];
                }
            }
        }
        s
    } else {
        let g = gram(w, rows, cols, true);
        let total: f64 = g.iter().map(|v| v * v).sum();
        let diag: f64 = column_sq_norms(w, rows, cols).iter().map(|v| v * v).sum();
        (total - diag).max(0.0)
    }
}

/// ∂/∂W = 4 · W · offdiag(WᵀW) = 4 · (WWᵀW − W·diag(‖col‖²)).
pub(crate) fn orthogonal_penalty_grad(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut d = vec![0.0; rows * cols];
    if cols <= rows {
        let mut g = gram(w, rows, cols, false);
        for i in 0..cols {
            g[i * cols + i] = 0.0;
        }
        for r in 0..rows {
            let wr = &w[r * cols..(r + 1) * cols];
            let dr = &mut d[r * cols..(r + 1) * cols];
            for (k, &a) in wr.iter().enumerate() {
                let gk = &g[k * cols..(k + 1) * cols];
                dr.iter_mut().zip(gk).for_each(|(acc, &b)| *acc += 4.0 * a * b);
            }
        }
    } else {
        let g = gram(w, rows, cols, true);
        let c = column_sq_norms(w, rows, cols);
        for r in 0..rows {
            let dr = &mut d[r * cols..(r + 1) * cols];
            for k in 0..rows {
                let a = g[r * rows + k];
                let wk = &w[k * cols..(k + 1) * cols];
                dr.iter_mut().zip(wk).for_each(|(acc, &b)| *acc += 4.0 * a * b);
            }
            let wr = &w[r * cols..(r + 1) * cols];
            dr.iter_mut()
                .zip(wr)
                .zip(&c)
                .for_each(|((acc, &wv), &cv)| *acc -= 4.0 * wv * cv);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.leaf(&t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv2d_sliding_window() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = tape.leaf(&t(&[1, 1, 2, 2], &[1., 0., 0., 1.]));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y), &[6., 8., 12., 14.]);
    }

    #[test]
    fn conv2d_stride_two_shape() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros([1, 3, 64, 64]));
        let k = tape.leaf(&Tensor::zeros([8, 3, 4, 4]));
        let y = tape.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 8, 32, 32]);
    }

    #[test]
    fn conv2d_channel_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros([1, 3, 8, 8]));
        let k = tape.leaf(&Tensor::zeros([4, 2, 3, 3]));
        let err = tape.conv2d(x, k, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 8, 8]") && msg.contains("[4, 2, 3, 3]"), "{msg}");
    }

    #[test]
    fn conv_transpose_scaling_and_shape() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 1, 2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let k = tape.leaf(&t(&[1, 1, 1, 1], &[2.5]));
        let y = tape.conv_transpose2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y), &[2.5, -5.0, 7.5, 1.25]);

        let x = tape.leaf(&Tensor::zeros([1, 4, 32, 32]));
        let k = tape.leaf(&Tensor::zeros([4, 3, 4, 4]));
        let y = tape.conv_transpose2d(x, k, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 64, 64]);
    }

    #[test]
    fn batch_norm_cases() {
        let mut tape = Tape::new();
        let gamma = tape.leaf(&Tensor::full([1], 1.0));
        let beta = tape.leaf(&Tensor::zeros([1]));
        let x = tape.leaf(&Tensor::full([2, 1, 1, 2], 3.0));
        let (y, _) = tape.batch_norm2d(x, gamma, beta, 1e-5).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));

        let x = tape.leaf(&t(&[1, 1, 1, 2], &[1.0, 3.0]));
        let (y, stats) = tape.batch_norm2d(x, gamma, beta, 1e-12).unwrap();
        let v = tape.value(y);
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![2.0]);

        let x = tape.leaf(&Tensor::full([1, 1, 1, 1], 3.0));
        assert!(tape.batch_norm2d(x, gamma, beta, 1e-5).is_err());
    }

    #[test]
    fn batch_norm_output_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let gamma = tape.leaf(&Tensor::full([3], 1.0));
        let beta = tape.leaf(&Tensor::zeros([3]));
        let x = tape.leaf(&Tensor::randn([4, 3, 5, 5], 7.0, &mut rng));
        let (y, _) = tape.batch_norm2d(x, gamma, beta, 1e-5).unwrap();
        let v = tape.value(y);
        for ch in 0..3 {
            let mut s = 0.0;
            for n in 0..4 {
                s += v[(n * 3 + ch) * 25..][..25].iter().sum::<f64>();
            }
            assert!((s / 100.0).abs() < 1e-6);
        }
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[-2.0, 0.0, 3.0]));
        let y = tape.activation(x, Activation::Relu).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0, 3.0]);
        let x = tape.leaf(&t(&[2], &[-5.0, 5.0]));
        let y = tape.activation(x, Activation::LeakyRelu(0.2)).unwrap();
        assert_eq!(tape.value(y), &[-1.0, 5.0]);
        let x = tape.leaf(&t(&[1], &[0.0]));
        let y = tape.activation(x, Activation::Sigmoid).unwrap();
        assert_eq!(tape.value(y), &[0.5]);
        let x = tape.leaf(&t(&[2], &[-800.0, 800.0]));
        let y = tape.activation(x, Activation::Tanh).unwrap();
        assert_eq!(tape.value(y), &[-1.0, 1.0]);
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), Some(&[1.0, 1.0, 1.0][..]));

        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), Some(&[2.0, 4.0][..]));
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), Some(&[4.0, 8.0][..]));
        tape.zero_grad();
        assert_eq!(tape.grad(x), None);
    }

    #[test]
    fn spatial_mean_value_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 2, 1, 2], &[1.0, 3.0, -2.0, 6.0]));
        let m = tape.spatial_mean(x).unwrap();
        assert_eq!(tape.shape(m), [1, 2]);
        assert_eq!(tape.value(m), [2.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = vec![Tensor::randn([2, 3, 2, 3], 1.0, &mut rng)];
        let err = grad_check(&mut params, 1e-5, |tape, v| {
            let m = tape.spatial_mean(v[0])?;
            let sq = tape.mul(m, m)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let w = tape.leaf(&t(&[2], &[3.0, 4.0]).with_requires_grad(true));
        let p = tape.mul(x, w).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), None);
        assert_eq!(tape.grad(w), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn ortho_penalty_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (rows, cols) in [(3, 7), (7, 3), (4, 4), (1, 5)] {
            let w = Tensor::randn([rows, cols], 1.0, &mut rng);
            // direct WᵀW route
            let mut direct = 0.0;
            for i in 0..cols {
                for j in 0..cols {
                    if i != j {
                        let gij: f64 = (0..rows)
                            .map(|r| w.data()[r * cols + i] * w.data()[r * cols + j])
                            .sum();
                        direct += gij * gij;
                    }
                }
            }
            let fast = orthogonal_penalty_value(w.data(), rows, cols);
            assert!((fast - direct).abs() <= 1e-10 * direct.max(1.0), "{rows}x{cols}");
        }
    }

    #[test]
    fn ortho_penalty_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for shape in [[3usize, 5], [5, 3]] {
            let mut params = vec![Tensor::randn(shape, 1.0, &mut rng)];
            let err = grad_check(&mut params, 1e-5, |tape, v| tape.orthogonal_penalty(v[0])).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }
}
