//! Federated training engine.
//!
//! A round selects `m = max(ceil(C K), 1)` clients, runs [`client_update`] for
//! each of them from the same global weights, and combines the results:
//!
//! * [`UpdateMode::SendWeights`]: the new global model is the sample-weighted
//!   mean of the client models.
//! * [`UpdateMode::SendDelta`]: clients report `w_k - w_t`; the server negates
//!   the weighted mean delta and feeds it to its optimizer as a gradient.
//!   With plain SGD and a unit server rate both modes coincide.
//!
//! Client work within a round is independent and runs on the rayon pool.
//! Aggregation always consumes updates sorted by client id.

mod aggregate;
mod central;
mod client;

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::nn::{init_params, MlpSpec, ParamVector, ServerOptimizer, ServerOptimizerState};
use crate::seed;

pub use aggregate::{
    aggregate_deltas, aggregate_deltas_normalized, aggregate_weights, aggregate_weights_normalized,
    Contribution, Normalization,
};
pub use central::{evaluate, evaluate_indices, train_centralized, CentralConfig};
pub use client::{client_update, LocalSgd, LocalUpdate};

/// Local mini-batch size; `Full` uses the whole shard as one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Fixed(usize),
}

impl BatchSize {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Self::Full => n.max(1),
            Self::Fixed(b) => b.max(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    SendWeights,
    SendDelta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    /// `K`, total registered clients; must equal the number of shards.
    pub num_clients: usize,
    /// `C`, fraction of clients selected per round, in `(0, 1]`.
    pub client_fraction: f64,
    pub local: LocalSgd,
    pub server_optimizer: ServerOptimizer,
    pub server_lr: f64,
    pub rounds: usize,
    pub update_mode: UpdateMode,
    pub seed: u64,
    /// Evaluate accuracies every this many rounds; `None` picks every round up
    /// to 200 rounds and every 5th beyond. The final round is always evaluated.
    pub eval_every: Option<usize>,
    /// Normalize aggregation by the sample count of all `K` clients instead of
    /// the participating ones.
    pub literal_normalization: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            client_fraction: 0.1,
            local: LocalSgd {
                epochs: 1,
                batch_size: BatchSize::Fixed(10),
                lr: 0.05,
            },
            server_optimizer: ServerOptimizer::Sgd,
            server_lr: 1.0,
            rounds: 100,
            update_mode: UpdateMode::SendWeights,
            seed: 0,
            eval_every: None,
            literal_normalization: false,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_clients == 0 {
            return bad("num_clients must be positive".into());
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return bad(format!("client_fraction must be in (0, 1], got {}", self.client_fraction));
        }
        if self.local.epochs == 0 {
            return bad("local epochs must be at least 1".into());
        }
        if let BatchSize::Fixed(0) = self.local.batch_size {
            return bad("batch size must be at least 1".into());
        }
        if !(self.local.lr >= 0.0 && self.local.lr.is_finite()) {
            return bad(format!("client learning rate must be finite and >= 0, got {}", self.local.lr));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return bad(format!("server learning rate must be positive, got {}", self.server_lr));
        }
        if self.eval_every == Some(0) {
            return bad("eval_every must be positive".into());
        }
        Ok(())
    }

    pub fn clients_per_round(&self) -> usize {
        clients_per_round(self.num_clients, self.client_fraction)
    }

    fn eval_every(&self) -> usize {
        self.eval_every
            .unwrap_or(if self.rounds <= 200 { 1 } else { 5 })
    }

    fn evaluates(&self, round: usize) -> bool {
        round.is_multiple_of(self.eval_every()) || round == self.rounds
    }
}

/// `max(ceil(C K), 1)`, capped at `K`.
pub fn clients_per_round(num_clients: usize, fraction: f64) -> usize {
    // Tolerance so that e.g. 0.3 * 10 is not rounded up to 4.
    let m = (fraction * num_clients as f64 - 1e-9).ceil().max(1.0) as usize;
    m.min(num_clients)
}

/// A uniformly random `m`-subset of `0..num_clients`, sorted ascending.
pub fn select_clients(num_clients: usize, fraction: f64, round_seed: u64) -> Vec<usize> {
    let m = clients_per_round(num_clients, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    let mut ids = rand::seq::index::sample(&mut rng, num_clients, m).into_vec();
    ids.sort_unstable();
    ids
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalState {
    pub params: ParamVector,
    /// Number of completed rounds.
    pub round: usize,
    pub server: ServerOptimizerState,
}

impl GlobalState {
    pub fn new(params: ParamVector, config: &FedConfig) -> Self {
        Self {
            params,
            round: 0,
            server: ServerOptimizerState::new(config.server_optimizer, config.server_lr),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    /// 1-based round (or epoch, for centralized training).
    pub round: usize,
    pub selected: Vec<usize>,
    /// Mean pre-step batch loss seen by clients during local training.
    pub mean_client_loss: f64,
    /// On-device training accuracy: fraction of local batch samples the
    /// client's current model classified correctly just before each step.
    pub client_train_acc: f64,
    /// Accuracy of the global model on the union of all client shards.
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub elapsed_s: f64,
}

/// One aggregation round; `state` is left untouched.
pub fn run_round(
    state: &GlobalState,
    config: &FedConfig,
    shards: &[ClientShard],
    dataset: &Dataset,
) -> Result<(GlobalState, RoundMetrics)> {
    let started = Instant::now();
    if shards.len() != config.num_clients {
        return Err(Error::InvalidConfig(format!(
            "config has K={} clients but {} shards were supplied",
            config.num_clients,
            shards.len()
        )));
    }
    let round = state.round + 1;
    let selected = select_clients(
        config.num_clients,
        config.client_fraction,
        seed::derive(config.seed, &[round as u64, seed::SELECTION]),
    );

    let updates: Vec<LocalUpdate> = selected
        .par_iter()
        .map(|&k| {
            let client_seed = seed::derive(config.seed, &[round as u64, k as u64]);
            client_update(&shards[k], dataset, &state.params, config.local, client_seed, round)
        })
        .collect::<Result<_>>()?;

    let seen: usize = updates.iter().map(|u| u.num_samples).sum();
    let mean_client_loss =
        updates.iter().map(|u| u.mean_loss * u.num_samples as f64).sum::<f64>() / seen as f64;
    let correct: usize = updates.iter().map(|u| u.correct).sum();
    let visited: usize = updates.iter().map(|u| u.visited).sum();
    let client_train_acc = correct as f64 / visited as f64;

    let normalization = if config.literal_normalization {
        Normalization::Total(shards.iter().map(ClientShard::num_samples).sum())
    } else {
        Normalization::Participants
    };

    let mut next = state.clone();
    match config.update_mode {
        UpdateMode::SendWeights => {
            let contributions: Vec<Contribution<ParamVector>> =
                updates.into_iter().map(LocalUpdate::into_contribution).collect();
            next.params = aggregate_weights_normalized(&contributions, normalization)?;
        }
        UpdateMode::SendDelta => {
            let contributions = updates
                .into_iter()
                .map(|u| {
                    Ok(Contribution {
                        client_id: u.client_id,
                        value: u.params.delta_from(&state.params)?,
                        num_samples: u.num_samples,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let pseudo_grad = aggregate_deltas_normalized(&contributions, normalization)?;
            next.server.apply(&mut next.params, &pseudo_grad)?;
        }
    }
    next.round = round;

    let metrics = RoundMetrics {
        round,
        selected,
        mean_client_loss,
        client_train_acc,
        train_acc: None,
        test_acc: None,
        elapsed_s: started.elapsed().as_secs_f64(),
    };
    Ok((next, metrics))
}

#[derive(Clone, Debug)]
pub struct FederatedRun {
    pub metrics: Vec<RoundMetrics>,
    pub final_state: GlobalState,
}

/// Runs `config.rounds` rounds from `init_params(spec, config.seed)`.
pub fn train_federated(
    spec: &Arc<MlpSpec>,
    config: &FedConfig,
    shards: &[ClientShard],
    dataset: &Dataset,
    test_set: &Dataset,
) -> Result<FederatedRun> {
    let state = GlobalState::new(init_params(spec, config.seed), config);
    train_federated_from(state, config, shards, dataset, test_set, |_| {})
}

/// Like [`train_federated`] but resumes from `state`, running until
/// `config.rounds` rounds are complete and calling `observe` after each.
pub fn train_federated_from(
    mut state: GlobalState,
    config: &FedConfig,
    shards: &[ClientShard],
    dataset: &Dataset,
    test_set: &Dataset,
    mut observe: impl FnMut(&RoundMetrics),
) -> Result<FederatedRun> {
    config.validate()?;
    let train_indices: Vec<usize> = shards.iter().flat_map(|s| s.indices.iter().copied()).collect();
    let mut metrics = Vec::with_capacity(config.rounds.saturating_sub(state.round));
    while state.round < config.rounds {
        let (next, mut m) = run_round(&state, config, shards, dataset)?;
        state = next;
        if config.evaluates(m.round) {
            let started = Instant::now();
            m.train_acc = Some(evaluate_indices(&state.params, dataset, &train_indices)?);
            m.test_acc = Some(evaluate(&state.params, test_set)?);
            m.elapsed_s += started.elapsed().as_secs_f64();
        }
        observe(&m);
        metrics.push(m);
    }
    Ok(FederatedRun {
        metrics,
        final_state: state,
    })
}
