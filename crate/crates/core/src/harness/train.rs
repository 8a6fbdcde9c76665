//! Stand-alone training of a discrete genotype from scratch.

use serde::{Deserialize, Serialize};

use super::task::{accuracy, SyntheticTask};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::space::{CellSpec, Genotype, OperationSet};
use crate::supernet::{CellNetwork, NetworkShape};
use crate::tensor::{cosine_lr, Sgd, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub channels: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    /// Evaluation batch; normalisation uses the statistics of each batch.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            channels: 16,
            lr: 0.025,
            momentum: 0.9,
            weight_decay: 3e-4,
            grad_clip: Some(5.0),
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.eval_batch_size == 0
            || self.channels == 0
        {
            return Err(Error::Config(
                "train epochs, batch sizes and channels must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "train.lr must be a non-negative number, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Accuracy of `network` on `data`, evaluated in consecutive batches.
pub fn evaluate(network: &CellNetwork, data: &Dataset, batch_size: usize) -> Result<f64> {
    let mut correct = 0.0;
    for batch in data.sequential_batches(batch_size)? {
        let mut tape = Tape::new();
        let views = [
            tape.constant(batch.views[0].clone())?,
            tape.constant(batch.views[1].clone())?,
        ];
        let bound = network.weights.bind(&mut tape, false)?;
        let logits = network.forward(&mut tape, &bound, views, None)?;
        correct += accuracy(tape.value(logits), &batch.labels) * batch.len() as f64;
    }
    Ok(correct / data.len() as f64)
}

/// Train the discrete network of `genotype` on the task's training split and
/// return its test accuracy. Everything random descends from `seed`.
pub fn train_standalone(
    genotype: &Genotype,
    task: &SyntheticTask,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let cell = CellSpec::new(genotype.nodes.len(), cfg.channels)?;
    genotype
        .validate(&cell, genotype.policy, &OperationSet::canonical())
        .into_result()?;
    let shape = NetworkShape {
        cell,
        input_channels: task.config.channels,
        classes: task.config.classes,
    };
    let mut net =
        CellNetwork::from_genotype(shape, genotype, derive_seed(seed, "standalone-init", 0))?;
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay, cfg.grad_clip);
    let per_epoch = task.train.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_seed(seed, "standalone-train", epoch as u64));
        for (s, batch) in task
            .train
            .batches(cfg.batch_size, &mut rng)?
            .iter()
            .enumerate()
        {
            let mut tape = Tape::new();
            let views = [
                tape.constant(batch.views[0].clone())?,
                tape.constant(batch.views[1].clone())?,
            ];
            let bound = net.weights.bind(&mut tape, true)?;
            let logits = net.forward(&mut tape, &bound, views, None)?;
            let loss = tape.cross_entropy(logits, &batch.labels)?;
            let grads = tape.backward(loss)?;
            net.weights.absorb_grads(&bound, &grads);
            sgd.step(
                &mut net.weights,
                cosine_lr(epoch * per_epoch + s, total, cfg.lr)?,
            )?;
        }
    }
    evaluate(&net, &task.test, cfg.eval_batch_size)
}
