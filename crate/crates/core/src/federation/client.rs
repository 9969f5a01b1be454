use super::aggregate::Contribution;
use super::BatchSize;
use crate::data::{shard_batches, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::nn::{forward_backward, ParamVector};
use crate::seed;

/// Client-side training hyperparameters: `E` epochs of mini-batch SGD with
/// batch size `B` and rate `lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalSgd {
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub lr: f64,
}

/// What a client returns to the server, plus the training statistics it
/// observed along the way.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    pub num_samples: usize,
    /// Sample-weighted mean of the pre-step batch losses over all epochs.
    pub mean_loss: f64,
    /// Pre-step argmax hits and samples visited, summed over all epochs.
    pub correct: usize,
    pub visited: usize,
}

impl LocalUpdate {
    pub fn into_contribution(self) -> Contribution<ParamVector> {
        Contribution {
            client_id: self.client_id,
            value: self.params,
            num_samples: self.num_samples,
        }
    }
}

/// `E` epochs over the shard; each epoch reshuffles with a seed derived from
/// `client_seed` and takes one SGD step per batch. `w` is not modified.
pub fn client_update(
    shard: &ClientShard,
    dataset: &Dataset,
    w: &ParamVector,
    local: LocalSgd,
    client_seed: u64,
    round: usize,
) -> Result<LocalUpdate> {
    if shard.indices.is_empty() {
        return Err(Error::InvalidPlan(format!("client {} has an empty shard", shard.client_id)));
    }
    let batch_size = local.batch_size.resolve(shard.num_samples());
    let mut params = w.clone();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    let mut visited = 0;
    let diverged = || Error::DivergedClient {
        client_id: shard.client_id,
        round,
    };
    for epoch in 0..local.epochs {
        let epoch_seed = seed::derive(client_seed, &[epoch as u64]);
        for indices in shard_batches(shard, batch_size, epoch_seed) {
            let batch = dataset.batch(&indices)?;
            let eval = forward_backward(&params, &batch)?;
            if !eval.loss.is_finite() {
                return Err(diverged());
            }
            loss_sum += eval.loss * batch.len() as f64;
            correct += eval.correct;
            visited += batch.len();
            params.apply_sgd(&eval.grad, local.lr)?;
        }
    }
    if !params.is_finite() {
        return Err(diverged());
    }
    Ok(LocalUpdate {
        client_id: shard.client_id,
        params,
        num_samples: shard.num_samples(),
        mean_loss: loss_sum / visited as f64,
        correct,
        visited,
    })
}
