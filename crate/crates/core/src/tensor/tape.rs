//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output value. Nodes are
//! appended in execution order, so the tape is topologically sorted and the
//! backward pass walks it once from the loss back to the leaves.

use super::kernels::{self, ConvGeom};
use super::value::Tensor;
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    WeightedSum {
        inputs: Vec<Var>,
        weights: Var,
    },
    Matmul(Var, Var),
    Reshape(Var),
    Softmax {
        logits: Var,
        temperature: f64,
    },
    Sigmoid(Var),
    Relu(Var),
    Conv2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
    },
    AvgPool3(Var),
    MaxPool3 {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Concat(Vec<Var>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation (the gradient graph).
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn nchw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    expect_rank(op, t, 4)?;
    let s = t.shape();
    Ok((s[0], s[1], s[2], s[3]))
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf without gradient (data, labels, fixed coefficients).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("scale", value, Op::Scale(a, factor), &[a])
    }

    /// `Σ_k weights[k] · inputs[k]`; `weights` is a vector with one entry per input.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: Var) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("weighted_sum", "no inputs"))?;
        let tw = self.value(weights);
        if tw.numel() != inputs.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} inputs but {} weights", inputs.len(), tw.numel()),
            ));
        }
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![0.0; self.value(first).numel()];
        for (k, &x) in inputs.iter().enumerate() {
            let tx = self.value(x);
            if tx.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("{:?} vs {:?}", tx.shape(), shape),
                ));
            }
            let wk = self.value(weights).data()[k];
            for (a, v) in acc.iter_mut().zip(tx.data()) {
                *a += wk * v;
            }
        }
        let value = Tensor::new(shape, acc)?;
        let mut deps = inputs.to_vec();
        deps.push(weights);
        self.push(
            "weighted_sum",
            value,
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights,
            },
            &deps,
        )
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        expect_rank("matmul", ta, 2)?;
        expect_rank("matmul", tb, 2)?;
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} × {:?}", ta.shape(), tb.shape()),
            ));
        }
        let value = Tensor::new(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))?;
        self.push("matmul", value, Op::Matmul(a, b), &[a, b])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Temperature softmax over all elements of `logits`.
    pub fn softmax(&mut self, logits: Var, temperature: f64) -> Result<Var> {
        let tl = self.value(logits);
        let probs = super::softmax_t(tl.data(), temperature)?;
        let value = Tensor::new(tl.shape().to_vec(), probs)?;
        self.push(
            "softmax",
            value,
            Op::Softmax {
                logits,
                temperature,
            },
            &[logits],
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("relu", value, Op::Relu(a), &[a])
    }

    /// Grouped, dilated, stride-1 convolution with size-preserving zero padding.
    /// `weight` is `[c_out, c_in / groups, k, k]` with odd `k`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        let (n, cin, h, w) = nchw("conv2d", self.value(input))?;
        let tw = self.value(weight);
        expect_rank("conv2d", tw, 4)?;
        let ws = tw.shape();
        let (cout, cpg, k) = (ws[0], ws[1], ws[2]);
        if ws[3] != k || k % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be square and odd, got {ws:?}"),
            ));
        }
        if groups == 0
            || dilation == 0
            || cin % groups != 0
            || cout % groups != 0
            || cpg != cin / groups
        {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channels {cin}, weight {ws:?}, groups {groups}, dilation {dilation}"
                ),
            ));
        }
        let geom = ConvGeom {
            n,
            cin,
            cout,
            h,
            w,
            k,
            dilation,
            groups,
        };
        let out = kernels::conv2d_forward(self.value(input).data(), tw.data(), &geom);
        let value = Tensor::new(vec![n, cout, h, w], out)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                weight,
                geom,
            },
            &[input, weight],
        )
    }

    /// Depthwise convolution: one `k × k` filter per channel.
    pub fn depthwise_conv2d(&mut self, input: Var, weight: Var, dilation: usize) -> Result<Var> {
        let channels = nchw("depthwise_conv2d", self.value(input))?.1;
        self.conv2d(input, weight, dilation, channels)
    }

    /// 1×1 convolution mixing channels.
    pub fn pointwise_conv2d(&mut self, input: Var, weight: Var) -> Result<Var> {
        let ws = self.value(weight).shape();
        if ws.len() != 4 || ws[2] != 1 || ws[3] != 1 {
            return Err(Error::shape(
                "pointwise_conv2d",
                format!("expected 1×1 kernel, got {ws:?}"),
            ));
        }
        self.conv2d(input, weight, 1, 1)
    }

    /// Dense convolution with dilation 2.
    pub fn dilated_conv2d(&mut self, input: Var, weight: Var) -> Result<Var> {
        self.conv2d(input, weight, 2, 1)
    }

    pub fn avg_pool3x3(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("avg_pool3x3", self.value(input))?;
        let out = kernels::avg_pool3_forward(self.value(input).data(), n * c, h, w);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push("avg_pool3x3", value, Op::AvgPool3(input), &[input])
    }

    pub fn max_pool3x3(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("max_pool3x3", self.value(input))?;
        let (out, argmax) = kernels::max_pool3_forward(self.value(input).data(), n * c, h, w);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            "max_pool3x3",
            value,
            Op::MaxPool3 { input, argmax },
            &[input],
        )
    }

    /// Per-channel standardization with batch statistics only, followed by a
    /// learnable per-channel scale and shift.
    pub fn batch_stat_norm(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("batch_stat_norm", self.value(input))?;
        for v in [scale, shift] {
            if self.value(v).numel() != c {
                return Err(Error::shape(
                    "batch_stat_norm",
                    format!(
                        "affine parameter has {} entries for {c} channels",
                        self.value(v).numel()
                    ),
                ));
            }
        }
        let x = self.value(input).data();
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; x.len()];
        let (gamma, beta) = (self.value(scale).data(), self.value(shift).data());
        for ch in 0..c {
            let plane = |s: usize| (s * c + ch) * hw..(s * c + ch + 1) * hw;
            let mean = (0..n).flat_map(|s| x[plane(s)].iter()).sum::<f64>() / m;
            let var = (0..n)
                .flat_map(|s| x[plane(s)].iter())
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / m;
            let istd = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = istd;
            for s in 0..n {
                for i in plane(s) {
                    normalized[i] = (x[i] - mean) * istd;
                    out[i] = gamma[ch] * normalized[i] + beta[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            "batch_stat_norm",
            value,
            Op::BatchNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
            },
            &[input, scale, shift],
        )
    }

    /// `[n, c, h, w] → [n, c]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("global_avg_pool", self.value(input))?;
        let hw = h * w;
        let x = self.value(input).data();
        let out = (0..n * c)
            .map(|p| x[p * hw..(p + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool(input), &[input])
    }

    /// `x [n, in] · weightᵀ [in, out] + bias [out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        expect_rank("linear", tx, 2)?;
        expect_rank("linear", tw, 2)?;
        let (n, fin) = (tx.shape()[0], tx.shape()[1]);
        let (fout, fin2) = (tw.shape()[0], tw.shape()[1]);
        if fin != fin2 || tb.numel() != fout {
            return Err(Error::shape(
                "linear",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    tx.shape(),
                    tw.shape(),
                    tb.shape()
                ),
            ));
        }
        let mut out = vec![0.0; n * fout];
        for s in 0..n {
            let row = &tx.data()[s * fin..(s + 1) * fin];
            for o in 0..fout {
                let wrow = &tw.data()[o * fin..(o + 1) * fin];
                out[s * fout + o] =
                    tb.data()[o] + row.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let value = Tensor::new(vec![n, fout], out)?;
        self.push(
            "linear",
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        )
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let (n, _, h, w) = nchw("concat_channels", self.value(first))?;
        let mut total_c = 0;
        for &v in inputs {
            let (n2, c, h2, w2) = nchw("concat_channels", self.value(v))?;
            if (n2, h2, w2) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!(
                        "{:?} vs {:?}",
                        self.value(v).shape(),
                        self.value(first).shape()
                    ),
                ));
            }
            total_c += c;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for s in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[s * c * hw..(s + 1) * c * hw]);
            }
        }
        let value = Tensor::new(vec![n, total_c, h, w], out)?;
        self.push(
            "concat_channels",
            value,
            Op::Concat(inputs.to_vec()),
            inputs,
        )
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        expect_rank("cross_entropy", tl, 2)?;
        let (n, k) = (tl.shape()[0], tl.shape()[1]);
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} rows but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for s in 0..n {
            let row = &tl.data()[s * k..(s + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for (j, v) in row.iter().enumerate() {
                probs[s * k + j] = (v - max).exp() / denom;
            }
            loss += log_denom - (row[labels[s]] - max);
        }
        let value = Tensor::scalar(loss / n as f64);
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    /// Back-propagate from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |buf| axpy(buf, 1.0, g));
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |buf| {
                    buf.iter_mut()
                        .zip(g)
                        .zip(db)
                        .for_each(|((o, gi), y)| *o += gi * y)
                });
                acc(*b, &mut |buf| {
                    buf.iter_mut()
                        .zip(g)
                        .zip(da)
                        .for_each(|((o, gi), x)| *o += gi * x)
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |buf| axpy(buf, *s, g)),
            Op::WeightedSum { inputs, weights } => {
                let w = self.value(*weights).data();
                for (k, &x) in inputs.iter().enumerate() {
                    acc(x, &mut |buf| axpy(buf, w[k], g));
                }
                acc(*weights, &mut |buf| {
                    for (k, &x) in inputs.iter().enumerate() {
                        buf[k] += dot(self.value(x).data(), g);
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |buf| {
                    for i in 0..m {
                        for p in 0..k {
                            buf[i * k + p] += (0..n)
                                .map(|j| g[i * n + j] * tb.data()[p * n + j])
                                .sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |buf| {
                    for p in 0..k {
                        for j in 0..n {
                            buf[p * n + j] += (0..m)
                                .map(|i| ta.data()[i * k + p] * g[i * n + j])
                                .sum::<f64>();
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |buf| axpy(buf, 1.0, g)),
            Op::Softmax {
                logits,
                temperature,
            } => {
                let y = node.value.data();
                let inner = dot(y, g);
                acc(*logits, &mut |buf| {
                    for i in 0..y.len() {
                        buf[i] += y[i] * (g[i] - inner) / temperature;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |buf| {
                    for i in 0..y.len() {
                        buf[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |buf| {
                    for i in 0..x.len() {
                        if x[i] > 0.0 {
                            buf[i] += g[i];
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                weight,
                geom,
            } => {
                let (x, w) = (self.value(*input).data(), self.value(*weight).data());
                acc(*input, &mut |buf| {
                    axpy(buf, 1.0, &kernels::conv2d_backward_input(g, w, geom))
                });
                acc(*weight, &mut |buf| {
                    axpy(
                        buf,
                        1.0,
                        &kernels::conv2d_backward_weight(g, x, w.len(), geom),
                    )
                });
            }
            Op::AvgPool3(a) => {
                let s = self.value(*a).shape();
                let gin = kernels::avg_pool3_backward(g, s[0] * s[1], s[2], s[3]);
                acc(*a, &mut |buf| axpy(buf, 1.0, &gin));
            }
            Op::MaxPool3 { input, argmax } => acc(*input, &mut |buf| {
                for (o, &src) in argmax.iter().enumerate() {
                    buf[src] += g[o];
                }
            }),
            Op::BatchNorm {
                input,
                scale,
                shift,
                normalized,
                inv_std,
            } => {
                let s = self.value(*input).shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let m = (n * hw) as f64;
                let gamma = self.value(*scale).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for smp in 0..n {
                    for ch in 0..c {
                        let base = (smp * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * normalized[i];
                        }
                    }
                }
                acc(*shift, &mut |buf| axpy(buf, 1.0, &sum_g));
                acc(*scale, &mut |buf| axpy(buf, 1.0, &sum_gx));
                acc(*input, &mut |buf| {
                    for smp in 0..n {
                        for ch in 0..c {
                            let base = (smp * c + ch) * hw;
                            let k = gamma[ch] * inv_std[ch] / m;
                            for i in base..base + hw {
                                buf[i] += k * (m * g[i] - sum_g[ch] - normalized[i] * sum_gx[ch]);
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool(a) => {
                let s = self.value(*a).shape();
                let hw = s[2] * s[3];
                acc(*a, &mut |buf| {
                    for (p, gp) in g.iter().enumerate() {
                        buf[p * hw..(p + 1) * hw]
                            .iter_mut()
                            .for_each(|b| *b += gp / hw as f64);
                    }
                });
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (tx, tw) = (self.value(*input), self.value(*weight));
                let (n, fin) = (tx.shape()[0], tx.shape()[1]);
                let fout = tw.shape()[0];
                acc(*input, &mut |buf| {
                    for s in 0..n {
                        for o in 0..fout {
                            let go = g[s * fout + o];
                            axpy(
                                &mut buf[s * fin..(s + 1) * fin],
                                go,
                                &tw.data()[o * fin..(o + 1) * fin],
                            );
                        }
                    }
                });
                acc(*weight, &mut |buf| {
                    for s in 0..n {
                        for o in 0..fout {
                            let go = g[s * fout + o];
                            axpy(
                                &mut buf[o * fin..(o + 1) * fin],
                                go,
                                &tx.data()[s * fin..(s + 1) * fin],
                            );
                        }
                    }
                });
                acc(*bias, &mut |buf| {
                    for s in 0..n {
                        axpy(buf, 1.0, &g[s * fout..(s + 1) * fout]);
                    }
                });
            }
            Op::Concat(inputs) => {
                let s = node.value.shape();
                let (n, total_c, hw) = (s[0], s[1], s[2] * s[3]);
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).shape()[1];
                    acc(v, &mut |buf| {
                        for smp in 0..n {
                            let src = (smp * total_c + offset) * hw;
                            axpy(
                                &mut buf[smp * c * hw..(smp + 1) * c * hw],
                                1.0,
                                &g[src..src + c * hw],
                            );
                        }
                    });
                    offset += c;
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f64;
                acc(*logits, &mut |buf| {
                    for s in 0..n {
                        for j in 0..k {
                            let target = if j == labels[s] { 1.0 } else { 0.0 };
                            buf[s * k + j] += scale * (probs[s * k + j] - target);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |buf| buf.iter_mut().for_each(|b| *b += g[0])),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            axpy(&mut out[i * n..(i + 1) * n], av, &b[p * n..(p + 1) * n]);
        }
    }
    out
}
