//! Experiment presets for the MNIST studies: sample-count sweeps, single-label
//! shards and single-sample shards, plus the centralized baseline.
//!
//! Learning rates, `K`, `C`, `E`, `B` and round counts are desk-scale choices,
//! not published values.

use std::sync::Arc;

use crate::data::{partition, Dataset, PartitionKind, PartitionPlan};
use crate::error::Result;
use crate::federation::{
    train_centralized, train_federated, train_federated_from, BatchSize, CentralConfig, FedConfig,
    FederatedRun, GlobalState, LocalSgd, RoundMetrics,
};
use crate::nn::{init_params, MlpSpec};

/// Hidden-and-output layer notation of the three MNIST networks.
pub const ARCHITECTURES: [&[usize]; 3] = [&[10], &[200, 10], &[500, 200, 10]];
pub const FIG2_SAMPLES: [usize; 5] = [1, 10, 50, 100, 200];
pub const FIG3_SAMPLES: [usize; 4] = [10, 50, 100, 200];

pub const DEFAULT_CLIENTS: usize = 100;
pub const DEFAULT_FRACTION: f64 = 0.1;
pub const DEFAULT_CLIENT_LR: f64 = 0.05;
pub const DEFAULT_BATCH: usize = 10;
pub const SWEEP_ROUNDS: usize = 100;
pub const CURVE_ROUNDS: usize = 300;

/// One federated training run: network, data split and round schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct FedExperiment {
    pub label: String,
    /// `[hidden..., classes]`; the input size comes from the dataset.
    pub layers: Vec<usize>,
    pub plan: PartitionPlan,
    pub fed: FedConfig,
}

impl FedExperiment {
    pub fn new(layers: &[usize], kind: PartitionKind, samples_per_client: usize, rounds: usize, seed: u64) -> Self {
        let plan = PartitionPlan::new(kind, DEFAULT_CLIENTS, samples_per_client, seed);
        let fed = FedConfig {
            num_clients: DEFAULT_CLIENTS,
            client_fraction: DEFAULT_FRACTION,
            local: LocalSgd {
                epochs: 1,
                batch_size: BatchSize::Fixed(DEFAULT_BATCH),
                lr: DEFAULT_CLIENT_LR,
            },
            rounds,
            seed,
            ..FedConfig::default()
        };
        Self {
            label: format!(
                "{}-{}x{}-seed{}",
                layer_label(layers),
                kind.name(),
                plan.samples_per_client(),
                seed
            ),
            layers: layers.to_vec(),
            plan,
            fed,
        }
    }

    pub fn spec(&self, input_dim: usize) -> Result<Arc<MlpSpec>> {
        Ok(Arc::new(MlpSpec::with_input(input_dim, &self.layers)?))
    }

    pub fn run(&self, train: &Dataset, test: &Dataset) -> Result<FederatedRun> {
        let shards = partition(train, &self.plan)?;
        let spec = self.spec(train.input_dim())?;
        train_federated(&spec, &self.fed, &shards, train, test)
    }

    /// Runs all rounds but evaluates only the last `window` of them; the
    /// returned metrics cover the evaluated tail.
    pub fn run_trailing(&self, train: &Dataset, test: &Dataset, window: usize) -> Result<FederatedRun> {
        let shards = partition(train, &self.plan)?;
        let spec = self.spec(train.input_dim())?;
        let warmup = FedConfig {
            rounds: self.fed.rounds.saturating_sub(window),
            eval_every: Some(usize::MAX),
            ..self.fed.clone()
        };
        let state = GlobalState::new(init_params(&spec, self.fed.seed), &self.fed);
        let head = train_federated_from(state, &warmup, &shards, train, test, |_| {})?;
        let tail = FedConfig {
            eval_every: Some(1),
            ..self.fed.clone()
        };
        train_federated_from(head.final_state, &tail, &shards, train, test, |_| {})
    }
}

/// `[500,200,10]` → `"500-200-10"`.
pub fn layer_label(layers: &[usize]) -> String {
    layers
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

/// Every architecture against every IID samples-per-device setting.
pub fn fig2_samples_sweep(samples: &[usize], seed: u64) -> Vec<FedExperiment> {
    ARCHITECTURES
        .iter()
        .flat_map(|layers| {
            samples
                .iter()
                .map(move |&n| FedExperiment::new(layers, PartitionKind::Iid, n, SWEEP_ROUNDS, seed))
        })
        .collect()
}

/// `[500,200,10]` with single-label shards of each size. Accuracies are
/// evaluated over the last rounds only.
pub fn fig3_single_label(samples: &[usize], seed: u64) -> Vec<FedExperiment> {
    samples
        .iter()
        .map(|&n| {
            let mut exp = FedExperiment::new(&[500, 200, 10], PartitionKind::SingleLabel, n, SWEEP_ROUNDS, seed);
            exp.fed.eval_every = Some(1);
            exp
        })
        .collect()
}

/// Validation curves for single-sample shards against single-label shards
/// of 10 and 200 samples.
pub fn fig4_round_curves(seed: u64, eval_every: usize) -> Vec<FedExperiment> {
    let mut runs = vec![FedExperiment::new(
        &[500, 200, 10],
        PartitionKind::SingleSample,
        1,
        CURVE_ROUNDS,
        seed,
    )];
    for n in [10, 200] {
        runs.push(FedExperiment::new(
            &[500, 200, 10],
            PartitionKind::SingleLabel,
            n,
            CURVE_ROUNDS,
            seed,
        ));
    }
    for run in &mut runs {
        run.fed.eval_every = Some(eval_every);
    }
    runs
}

/// Centralized baseline for one architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralExperiment {
    pub layers: Vec<usize>,
    pub config: CentralConfig,
}

impl CentralExperiment {
    pub fn new(layers: &[usize], epochs: usize, seed: u64) -> Self {
        Self {
            layers: layers.to_vec(),
            config: CentralConfig {
                lr: 0.05,
                batch_size: BatchSize::Fixed(32),
                epochs,
                seed,
            },
        }
    }

    pub fn run(&self, train: &Dataset, test: &Dataset) -> Result<Vec<RoundMetrics>> {
        let spec = Arc::new(MlpSpec::with_input(train.input_dim(), &self.layers)?);
        Ok(train_centralized(&spec, train, test, self.config)?.1)
    }
}

/// Mean of `(train_acc, test_acc)` over the last `window` evaluated rounds.
pub fn trailing_accuracy(metrics: &[RoundMetrics], window: usize) -> Option<(f64, f64)> {
    let evaluated: Vec<(f64, f64)> = metrics
        .iter()
        .filter_map(|m| Some((m.train_acc?, m.test_acc?)))
        .collect();
    let tail = &evaluated[evaluated.len().saturating_sub(window)..];
    if tail.is_empty() {
        return None;
    }
    let n = tail.len() as f64;
    Some((
        tail.iter().map(|p| p.0).sum::<f64>() / n,
        tail.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Mean on-device training accuracy over the last `window` rounds.
pub fn trailing_client_accuracy(metrics: &[RoundMetrics], window: usize) -> Option<f64> {
    let tail = &metrics[metrics.len().saturating_sub(window)..];
    if tail.is_empty() {
        return None;
    }
    Some(tail.iter().map(|m| m.client_train_acc).sum::<f64>() / tail.len() as f64)
}
