//! Seeded synthetic classification task with two input views, exactly one
//! of which carries label information.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::space::NUM_INPUT_NODES;
use crate::tensor::{cosine_lr, Adam, ParamStore, Tape, Tensor};

/// Shape of the class-dependent signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPattern {
    /// A per-class offset of each channel, constant over space.
    ChannelMean,
    /// A per-class spatial pattern with zero mean in every channel.
    Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Generator seed; independent of the search seed.
    pub seed: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Input node (1 or 2) whose view carries the class pattern.
    pub signal_node: usize,
    /// Amplitude of the class pattern; 0 makes labels independent of the inputs.
    pub signal_strength: f64,
    pub pattern: SignalPattern,
    pub noise_std: f64,
    /// Amplitude of label-independent patterns added to the other view.
    pub distractor_strength: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            seed: 0,
            train_samples: 512,
            val_samples: 256,
            test_samples: 512,
            channels: 3,
            height: 8,
            width: 8,
            classes: 8,
            signal_node: 2,
            signal_strength: 1.0,
            pattern: SignalPattern::Texture,
            noise_std: 1.0,
            distractor_strength: 0.0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "task.classes must be at least 2, got {}",
                self.classes
            )));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("task input shape must be non-empty".into()));
        }
        if self.train_samples < 2 || self.test_samples == 0 {
            return Err(Error::Config(
                "task needs at least two training and one test sample".into(),
            ));
        }
        if !(1..=NUM_INPUT_NODES).contains(&self.signal_node) {
            return Err(Error::Config(format!(
                "task.signal_node must be 1 or 2, got {}",
                self.signal_node
            )));
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("noise_std", self.noise_std),
            ("distractor_strength", self.distractor_strength),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "task.{name} must be a non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub config: TaskConfig,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// `count` patterns of shape `[c, h, w]`, each scaled to unit RMS.
fn patterns(
    kind: SignalPattern,
    count: usize,
    c: usize,
    h: usize,
    w: usize,
    rng: &mut Rng,
) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mut p: Vec<f64> = match kind {
                SignalPattern::ChannelMean => (0..c)
                    .flat_map(|_| {
                        let v: f64 = rng.sample(StandardNormal);
                        std::iter::repeat_n(v, h * w)
                    })
                    .collect(),
                SignalPattern::Texture => {
                    let mut p: Vec<f64> =
                        (0..c * h * w).map(|_| rng.sample(StandardNormal)).collect();
                    for ch in p.chunks_mut(h * w) {
                        let mean = ch.iter().sum::<f64>() / ch.len() as f64;
                        ch.iter_mut().for_each(|v| *v -= mean);
                    }
                    p
                }
            };
            let rms = (p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64).sqrt();
            if rms > 0.0 {
                p.iter_mut().for_each(|v| *v /= rms);
            }
            p
        })
        .collect()
}

fn split(
    cfg: &TaskConfig,
    n: usize,
    label: &str,
    signal: &[Vec<f64>],
    distractors: &[Vec<f64>],
) -> Result<Dataset> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, label, 0));
    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
    labels.shuffle(&mut rng);
    let per = cfg.channels * cfg.height * cfg.width;
    let mut views = [Vec::with_capacity(n * per), Vec::with_capacity(n * per)];
    let s = cfg.signal_node - 1;
    for &y in &labels {
        let distractor = rng.random_range(0..distractors.len());
        for (v, data) in views.iter_mut().enumerate() {
            let (pattern, amp) = if v == s {
                (&signal[y], cfg.signal_strength)
            } else {
                (&distractors[distractor], cfg.distractor_strength)
            };
            for &p in pattern {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(cfg.noise_std * noise + amp * p);
            }
        }
    }
    let shape = vec![n, cfg.channels, cfg.height, cfg.width];
    let [a, b] = views;
    Dataset::new(
        [Tensor::new(shape.clone(), a)?, Tensor::new(shape, b)?],
        labels,
        cfg.classes,
    )
}

/// Deterministic train/val/test splits for `cfg`. Labels are balanced to
/// within one sample per class.
pub fn generate_task(cfg: &TaskConfig) -> Result<SyntheticTask> {
    cfg.validate()?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "task-patterns", 0));
    let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
    let signal = patterns(cfg.pattern, cfg.classes, c, h, w, &mut rng);
    let distractors = patterns(cfg.pattern, cfg.classes, c, h, w, &mut rng);
    Ok(SyntheticTask {
        config: cfg.clone(),
        train: split(cfg, cfg.train_samples, "task-train", &signal, &distractors)?,
        val: split(
            cfg,
            cfg.val_samples.max(1),
            "task-val",
            &signal,
            &distractors,
        )?,
        test: split(cfg, cfg.test_samples, "task-test", &signal, &distractors)?,
    })
}

/// Both views of every sample flattened into one feature row.
fn flat_features(data: &Dataset) -> Result<Tensor> {
    let n = data.len();
    let per: usize = data.sample_shape().iter().product();
    let mut out = Vec::with_capacity(n * per * NUM_INPUT_NODES);
    for i in 0..n {
        for v in &data.views {
            out.extend_from_slice(&v.data()[i * per..(i + 1) * per]);
        }
    }
    Tensor::new(vec![n, per * NUM_INPUT_NODES], out)
}

/// Fraction of rows whose largest logit is the label.
pub(crate) fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| crate::tensor::argmax(&logits.data()[i * k..(i + 1) * k]) == Some(y))
        .count();
    correct as f64 / labels.len() as f64
}

/// Test accuracy of multinomial logistic regression on the raw pixels of
/// both views, trained full-batch with Adam.
pub fn linear_probe(task: &SyntheticTask, seed: u64) -> Result<f64> {
    const STEPS: usize = 300;
    let x = flat_features(&task.train)?;
    let features = x.shape()[1];
    let classes = task.config.classes;
    let mut rng = rng_from_seed(derive_seed(seed, "probe", 0));
    let mut store = ParamStore::new();
    let init: Vec<f64> = (0..classes * features)
        .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let wid = store.add("probe.weight", Tensor::new(vec![classes, features], init)?);
    let bid = store.add("probe.bias", Tensor::zeros(&[classes]));
    let mut adam = Adam::new(0.9, 0.999, 1e-2);
    for step in 0..STEPS {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone())?;
        let bound = store.bind(&mut tape, true)?;
        let logits = tape.linear(input, bound.get(wid), bound.get(bid))?;
        let loss = tape.cross_entropy(logits, &task.train.labels)?;
        let grads = tape.backward(loss)?;
        store.absorb_grads(&bound, &grads);
        adam.step(&mut store, cosine_lr(step, STEPS, 0.01)?)?;
    }
    let mut tape = Tape::new();
    let input = tape.constant(flat_features(&task.test)?)?;
    let bound = store.bind(&mut tape, false)?;
    let logits = tape.linear(input, bound.get(wid), bound.get(bid))?;
    Ok(accuracy(tape.value(logits), &task.test.labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_labels_and_rejections() {
        let task = generate_task(&TaskConfig {
            train_samples: 37,
            ..TaskConfig::default()
        })
        .unwrap();
        let mut counts = [0usize; 8];
        for &y in &task.train.labels {
            counts[y] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        let bad = TaskConfig {
            classes: 1,
            ..TaskConfig::default()
        };
        assert!(matches!(generate_task(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn texture_patterns_have_zero_channel_means() {
        let mut rng = rng_from_seed(1);
        for p in patterns(SignalPattern::Texture, 3, 2, 4, 4, &mut rng) {
            for ch in p.chunks(16) {
                assert!(ch.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }
}
