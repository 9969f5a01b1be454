//! Datasets, the IDX (MNIST) loader, synthetic stand-ins and client partitioning.

pub mod idx;
mod partition;
mod synth;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::nn::Batch;

pub use idx::{load_idx, load_mnist, MnistSplit};
pub use partition::{partition, shard_batches, ClientShard, PartitionKind, PartitionPlan};
pub use synth::synth_dataset;

/// `N` labelled examples with features in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidBatch("dataset must hold at least one sample".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::InvalidBatch(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidBatch(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the rows at `indices` into a training batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidBatch(format!(
                "index {bad} out of range for dataset of {}",
                self.len()
            )));
        }
        let inputs = self.inputs.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Batch::new(inputs, labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let batch = self.batch(indices)?;
        let labels = batch.labels().to_vec();
        Dataset::new(batch.inputs().clone(), labels, self.num_classes)
    }

    /// Histogram of labels over `indices`.
    pub fn label_census(&self, indices: &[usize]) -> Vec<usize> {
        let mut census = vec![0; self.num_classes];
        for &i in indices {
            census[self.labels[i]] += 1;
        }
        census
    }
}
