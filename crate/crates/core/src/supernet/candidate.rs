//! Candidate operations as small parameterised blocks.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::Rng;
use crate::space::OpKind;
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

/// Kaiming-normal tensor for a weight with the given fan-in.
pub(crate) fn kaiming(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = normal.sample(rng);
    }
    t
}

/// Per-channel scale (ones) and shift (zeros) of a normalisation layer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub(crate) struct NormParams {
    scale: ParamId,
    shift: ParamId,
}

impl NormParams {
    pub(crate) fn register(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        NormParams {
            scale: store.add(format!("{prefix}.bn.scale"), Tensor::full(&[channels], 1.0)),
            shift: store.add(format!("{prefix}.bn.shift"), Tensor::zeros(&[channels])),
        }
    }

    pub(crate) fn apply(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        tape.batch_stat_norm(x, bound.get(self.scale), bound.get(self.shift))
    }
}

/// ReLU, depthwise `k × k` (dilated), pointwise `1 × 1`, normalisation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct DepthwiseBlock {
    depthwise: ParamId,
    pointwise: ParamId,
    dilation: usize,
    norm: NormParams,
}

impl DepthwiseBlock {
    fn register(
        store: &mut ParamStore,
        prefix: &str,
        c: usize,
        k: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Self {
        DepthwiseBlock {
            depthwise: store.add(format!("{prefix}.dw"), kaiming(&[c, 1, k, k], k * k, rng)),
            pointwise: store.add(format!("{prefix}.pw"), kaiming(&[c, c, 1, 1], c, rng)),
            dilation,
            norm: NormParams::register(store, prefix, c),
        }
    }

    fn apply(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let h = tape.relu(x)?;
        let h = tape.depthwise_conv2d(h, bound.get(self.depthwise), self.dilation)?;
        let h = tape.pointwise_conv2d(h, bound.get(self.pointwise))?;
        self.norm.apply(tape, bound, h)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Body {
    Zero,
    Skip,
    AvgPool(NormParams),
    MaxPool(NormParams),
    Blocks(Vec<DepthwiseBlock>),
}

/// One candidate operation bound to its parameters in a [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: OpKind,
    body: Body,
}

impl Candidate {
    /// Register the parameters of `kind` under `prefix` (e.g. `cell.e1-3.sep_conv_3x3`).
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        kind: OpKind,
        channels: usize,
        rng: &mut Rng,
    ) -> Self {
        let c = channels;
        let body = match kind {
            OpKind::Zero => Body::Zero,
            OpKind::SkipConnect => Body::Skip,
            OpKind::AvgPool3x3 => Body::AvgPool(NormParams::register(store, prefix, c)),
            OpKind::MaxPool3x3 => Body::MaxPool(NormParams::register(store, prefix, c)),
            OpKind::SepConv3x3 | OpKind::SepConv5x5 => {
                let k = if kind == OpKind::SepConv3x3 { 3 } else { 5 };
                Body::Blocks(vec![
                    DepthwiseBlock::register(store, &format!("{prefix}.0"), c, k, 1, rng),
                    DepthwiseBlock::register(store, &format!("{prefix}.1"), c, k, 1, rng),
                ])
            }
            OpKind::DilConv3x3 | OpKind::DilConv5x5 => {
                let k = if kind == OpKind::DilConv3x3 { 3 } else { 5 };
                Body::Blocks(vec![DepthwiseBlock::register(store, prefix, c, k, 2, rng)])
            }
        };
        Candidate { kind, body }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        match &self.body {
            Body::Zero => {
                let shape = tape.value(x).shape().to_vec();
                tape.constant(Tensor::zeros(&shape))
            }
            Body::Skip => Ok(x),
            Body::AvgPool(norm) => {
                let h = tape.avg_pool3x3(x)?;
                norm.apply(tape, bound, h)
            }
            Body::MaxPool(norm) => {
                let h = tape.max_pool3x3(x)?;
                norm.apply(tape, bound, h)
            }
            Body::Blocks(blocks) => blocks.iter().try_fold(x, |h, b| b.apply(tape, bound, h)),
        }
    }
}
