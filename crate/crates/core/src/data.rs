//! Labelled two-view image datasets and seeded mini-batching.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::space::NUM_INPUT_NODES;
use crate::tensor::Tensor;

/// Samples with one `[c, h, w]` image per input node and a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// One `[n, c, h, w]` tensor per input node.
    pub views: [Tensor; NUM_INPUT_NODES],
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        views: [Tensor; NUM_INPUT_NODES],
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        for v in &views {
            if v.shape().len() != 4 || v.shape()[0] != labels.len() {
                return Err(Error::shape(
                    "dataset",
                    format!("view {:?} for {} labels", v.shape(), labels.len()),
                ));
            }
        }
        if views[0].shape() != views[1].shape() {
            return Err(Error::shape("dataset", "input views differ in shape"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            views,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[c, h, w]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.views[0].shape();
        [s[1], s[2], s[3]]
    }

    /// Rows `indices` as a new dataset.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let [c, h, w] = self.sample_shape();
        let per = c * h * w;
        let views = [0, 1].map(|v| {
            let src = self.views[v].data();
            let mut data = Vec::with_capacity(indices.len() * per);
            for &i in indices {
                data.extend_from_slice(&src[i * per..(i + 1) * per]);
            }
            data
        });
        let [a, b] = views;
        Dataset::new(
            [
                Tensor::new(vec![indices.len(), c, h, w], a)?,
                Tensor::new(vec![indices.len(), c, h, w], b)?,
            ],
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.classes,
        )
    }

    /// First and second half, in sample order.
    pub fn split_half(&self) -> Result<(Dataset, Dataset)> {
        let mid = self.len() / 2;
        let first: Vec<usize> = (0..mid).collect();
        let second: Vec<usize> = (mid..self.len()).collect();
        Ok((self.select(&first)?, self.select(&second)?))
    }

    /// Shuffled mini-batches covering every sample once; the last batch may
    /// be smaller.
    pub fn batches(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<Dataset>> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.is_empty() {
            return Err(Error::invalid("cannot batch an empty dataset"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order
            .chunks(batch_size)
            .map(|idx| self.select(idx))
            .collect()
    }

    /// Consecutive batches without shuffling.
    pub fn sequential_batches(&self, batch_size: usize) -> Result<Vec<Dataset>> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let order: Vec<usize> = (0..self.len()).collect();
        order
            .chunks(batch_size)
            .map(|idx| self.select(idx))
            .collect()
    }

    pub fn bit_checksum(&self) -> u64 {
        self.views[0].bit_checksum().rotate_left(17)
            ^ self.views[1].bit_checksum()
            ^ self
                .labels
                .iter()
                .fold(0u64, |h, &y| h.rotate_left(5) ^ y as u64)
    }
}
