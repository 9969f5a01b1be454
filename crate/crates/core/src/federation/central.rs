use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BatchSize, RoundMetrics};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward_backward, init_params, predict, MlpSpec, ParamVector};
use crate::seed;

/// Fraction of argmax-correct predictions (ties go to the lowest class).
pub fn evaluate(params: &ParamVector, dataset: &Dataset) -> Result<f64> {
    let predictions = predict(params, dataset.inputs().view())?;
    let correct = predictions
        .iter()
        .zip(dataset.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// [`evaluate`] restricted to the rows at `indices`.
pub fn evaluate_indices(params: &ParamVector, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    const CHUNK: usize = 2048;
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for chunk in indices.chunks(CHUNK) {
        let batch = dataset.batch(chunk)?;
        let predictions = predict(params, batch.inputs().view())?;
        correct += predictions
            .iter()
            .zip(batch.labels())
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Hyperparameters of the centralized baseline. `BatchSize::Full` is batch
/// gradient descent, `Fixed(1)` online gradient descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentralConfig {
    pub lr: f64,
    pub batch_size: BatchSize,
    pub epochs: usize,
    pub seed: u64,
}

/// Mini-batch SGD over the whole dataset; one metrics row per epoch.
pub fn train_centralized(
    spec: &Arc<MlpSpec>,
    dataset: &Dataset,
    test_set: &Dataset,
    config: CentralConfig,
) -> Result<(ParamVector, Vec<RoundMetrics>)> {
    let mut params = init_params(spec, config.seed);
    let batch_size = config.batch_size.resolve(dataset.len());
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let epoch_seed = seed::derive(config.seed, &[epoch as u64, seed::CENTRAL]);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for indices in order.chunks(batch_size) {
            let batch = dataset.batch(indices)?;
            let eval = forward_backward(&params, &batch)?;
            if !eval.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += eval.loss * batch.len() as f64;
            correct += eval.correct;
            params.apply_sgd(&eval.grad, config.lr)?;
        }
        metrics.push(RoundMetrics {
            round: epoch,
            selected: Vec::new(),
            mean_client_loss: loss_sum / dataset.len() as f64,
            client_train_acc: correct as f64 / dataset.len() as f64,
            train_acc: Some(evaluate(&params, dataset)?),
            test_acc: Some(evaluate(&params, test_set)?),
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((params, metrics))
}
