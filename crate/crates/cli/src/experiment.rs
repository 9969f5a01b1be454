//! Typed experiment configuration resolved from a [`FlatConfig`].

use std::path::PathBuf;

use fedsim_core::cost::{CentralScenario, FlScenario, InstanceKind, PriceSheet, SweepDimension};
use fedsim_core::cost::{fig6_preset, fig7_preset, fig8_preset};
use fedsim_core::data::PartitionKind;
use fedsim_core::experiment::{self as presets, FIG2_SAMPLES, FIG3_SAMPLES};
use fedsim_core::federation::{BatchSize, CentralConfig, FedConfig, LocalSgd, UpdateMode};
use fedsim_core::nn::{Activation, ServerOptimizer};

use crate::config::FlatConfig;
use crate::CliError;

/// Environment variable naming the MNIST directory.
pub const DATA_DIR_ENV: &str = "FEDSIM_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Fig2SamplesSweep,
    Fig3SingleLabel,
    Fig4RoundCurves,
    CentralBaseline,
    CostFig6,
    CostFig7,
    CostFig8,
    Custom,
}

impl ExperimentKind {
    const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Fig2SamplesSweep,
        ExperimentKind::Fig3SingleLabel,
        ExperimentKind::Fig4RoundCurves,
        ExperimentKind::CentralBaseline,
        ExperimentKind::CostFig6,
        ExperimentKind::CostFig7,
        ExperimentKind::CostFig8,
        ExperimentKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig2SamplesSweep => "fig2_samples_sweep",
            ExperimentKind::Fig3SingleLabel => "fig3_single_label",
            ExperimentKind::Fig4RoundCurves => "fig4_round_curves",
            ExperimentKind::CentralBaseline => "central_baseline",
            ExperimentKind::CostFig6 => "cost_fig6",
            ExperimentKind::CostFig7 => "cost_fig7",
            ExperimentKind::CostFig8 => "cost_fig8",
            ExperimentKind::Custom => "custom",
        }
    }

    fn parse(key: &str, name: &str) -> Result<Self, CliError> {
        Self::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            config_error(key, format!("unknown experiment `{name}`, expected one of {}", known.join(", ")))
        })
    }

    /// Presets whose settings are not published and were chosen for desk scale.
    pub fn uses_desk_scale_defaults(self) -> bool {
        matches!(
            self,
            ExperimentKind::Fig2SamplesSweep | ExperimentKind::Fig3SingleLabel | ExperimentKind::Fig4RoundCurves
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Mnist { dir: PathBuf },
    Synthetic { classes: usize, dim: usize, train: usize, test: usize },
}

/// One federated run of a preset or custom experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct FedRunSpec {
    pub label: String,
    pub layers: Vec<usize>,
    pub partition: PartitionKind,
    pub samples_per_client: usize,
    pub fed: FedConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub data: DataSource,
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub partition: PartitionKind,
    pub samples_per_client: usize,
    /// Samples-per-device values swept by the figure presets.
    pub samples_sweep: Vec<usize>,
    pub fed: FedConfig,
    pub central: CentralConfig,
    pub fl_scenario: FlScenario,
    pub central_scenario: CentralScenario,
    pub prices: PriceSheet,
    pub sweep: Option<(SweepDimension, Vec<f64>)>,
    /// Trailing window of evaluated rounds averaged in summaries.
    pub summary_window: usize,
    /// Write wall-clock seconds into `elapsed_s`; off keeps outputs byte-stable.
    pub record_timing: bool,
}

fn config_error(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_owned(),
        message: message.into(),
    }
}

fn parse_partition(key: &str, name: &str) -> Result<PartitionKind, CliError> {
    [PartitionKind::Iid, PartitionKind::SingleLabel, PartitionKind::SingleSample]
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| config_error(key, format!("unknown partition `{name}`, expected iid, single_label or single_sample")))
}

fn parse_batch(cfg: &FlatConfig, key: &str) -> Result<Option<BatchSize>, CliError> {
    if let Ok(Some(name)) = cfg.string(key) {
        return match name.as_str() {
            "full" => Ok(Some(BatchSize::Full)),
            _ => Err(config_error(key, format!("expected a positive integer or \"full\", got \"{name}\""))),
        };
    }
    match cfg.count(key)? {
        None => Ok(None),
        Some(0) => Err(config_error(key, "batch size must be at least 1")),
        Some(n) => Ok(Some(BatchSize::Fixed(n))),
    }
}

fn non_negative(key: &str, x: f64) -> Result<f64, CliError> {
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(config_error(key, format!("must be non-negative, got {x}")))
    }
}

fn positive(key: &str, x: f64) -> Result<f64, CliError> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(config_error(key, format!("must be positive, got {x}")))
    }
}

macro_rules! read_into {
    ($cfg:expr, $getter:ident, $key:expr, $target:expr) => {
        if let Some(v) = $cfg.$getter($key)? {
            $target = v;
        }
    };
    ($cfg:expr, $getter:ident, $key:expr, $target:expr, $check:ident) => {
        if let Some(v) = $cfg.$getter($key)? {
            $target = $check($key, v)?;
        }
    };
}

impl ExperimentConfig {
    /// Resolves preset defaults, applies every key and rejects unknown ones.
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self, CliError> {
        let kind = match cfg.string("experiment")? {
            Some(name) => ExperimentKind::parse("experiment", &name)?,
            None => ExperimentKind::Custom,
        };
        let seed = cfg
            .seed("seed")?
            .ok_or_else(|| config_error("seed", "missing mandatory key"))?;
        let mut exp = Self::preset(kind, seed);
        exp.read_run_keys(cfg)?;
        exp.read_cost_keys(cfg)?;
        cfg.reject_unknown()?;
        exp.validate()?;
        Ok(exp)
    }

    fn preset(kind: ExperimentKind, seed: u64) -> Self {
        let fed = FedConfig {
            num_clients: presets::DEFAULT_CLIENTS,
            client_fraction: presets::DEFAULT_FRACTION,
            local: LocalSgd {
                epochs: 1,
                batch_size: BatchSize::Fixed(presets::DEFAULT_BATCH),
                lr: presets::DEFAULT_CLIENT_LR,
            },
            rounds: presets::SWEEP_ROUNDS,
            seed,
            ..FedConfig::default()
        };
        let mut exp = Self {
            kind,
            seed,
            seeds: vec![seed],
            data: DataSource::Mnist {
                dir: std::env::var_os(DATA_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("data/mnist")),
            },
            layers: vec![500, 200, 10],
            activation: Activation::Relu,
            partition: PartitionKind::Iid,
            samples_per_client: 10,
            samples_sweep: Vec::new(),
            fed,
            central: presets::CentralExperiment::new(&[500, 200, 10], 5, seed).config,
            fl_scenario: FlScenario::default(),
            central_scenario: CentralScenario::default(),
            prices: PriceSheet::default(),
            sweep: None,
            summary_window: 10,
            record_timing: false,
        };
        match kind {
            ExperimentKind::Fig2SamplesSweep => exp.samples_sweep = FIG2_SAMPLES.to_vec(),
            ExperimentKind::Fig3SingleLabel => {
                exp.partition = PartitionKind::SingleLabel;
                exp.samples_sweep = FIG3_SAMPLES.to_vec();
            }
            ExperimentKind::Fig4RoundCurves => {
                exp.fed.rounds = presets::CURVE_ROUNDS;
                exp.fed.eval_every = Some(25);
            }
            ExperimentKind::CostFig6 | ExperimentKind::CostFig7 | ExperimentKind::CostFig8 => {
                let (dimension, values, base) = match kind {
                    ExperimentKind::CostFig6 => fig6_preset(),
                    ExperimentKind::CostFig7 => fig7_preset(),
                    _ => fig8_preset(),
                };
                exp.fl_scenario = base;
                exp.sweep = Some((dimension, values));
            }
            ExperimentKind::CentralBaseline | ExperimentKind::Custom => {}
        }
        exp
    }

    fn read_run_keys(&mut self, cfg: &FlatConfig) -> Result<(), CliError> {
        if let Some(seeds) = cfg.counts("seeds")? {
            if seeds.is_empty() {
                return Err(config_error("seeds", "list must not be empty"));
            }
            self.seeds = seeds.into_iter().map(|s| s as u64).collect();
        }

        let source = cfg.string("data.source")?.unwrap_or_else(|| "mnist".into());
        match source.as_str() {
            "mnist" => {
                // The environment variable wins so one config runs on any machine.
                if let (Some(dir), None) = (cfg.string("data.dir")?, std::env::var_os(DATA_DIR_ENV)) {
                    self.data = DataSource::Mnist { dir: dir.into() };
                }
            }
            "synthetic" => {
                self.data = DataSource::Synthetic {
                    classes: cfg.count("data.synthetic.classes")?.unwrap_or(10),
                    dim: cfg.count("data.synthetic.dim")?.unwrap_or(20),
                    train: cfg.count("data.synthetic.train")?.unwrap_or(2000),
                    test: cfg.count("data.synthetic.test")?.unwrap_or(500),
                };
            }
            other => return Err(config_error("data.source", format!("expected mnist or synthetic, got `{other}`"))),
        }
        if !matches!(self.data, DataSource::Synthetic { .. }) {
            for key in ["data.synthetic.classes", "data.synthetic.dim", "data.synthetic.train", "data.synthetic.test"] {
                if cfg.contains(key) {
                    return Err(config_error(key, "only valid with data.source = \"synthetic\""));
                }
            }
        }
        if matches!(self.data, DataSource::Synthetic { .. }) && cfg.contains("data.dir") {
            return Err(config_error("data.dir", "only valid with data.source = \"mnist\""));
        }

        read_into!(cfg, counts, "model.layers", self.layers);
        if let Some(act) = cfg.string("model.activation")? {
            self.activation = match act.as_str() {
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                other => return Err(config_error("model.activation", format!("expected relu or identity, got `{other}`"))),
            };
        }

        if let Some(kind) = cfg.string("partition.kind")? {
            self.partition = parse_partition("partition.kind", &kind)?;
        }
        read_into!(cfg, count, "partition.clients", self.fed.num_clients);
        read_into!(cfg, count, "partition.samples_per_client", self.samples_per_client);
        read_into!(cfg, counts, "partition.samples_sweep", self.samples_sweep);

        let fed = &mut self.fed;
        read_into!(cfg, number, "fed.client_fraction", fed.client_fraction);
        read_into!(cfg, count, "fed.rounds", fed.rounds);
        read_into!(cfg, count, "fed.epochs", fed.local.epochs);
        if let Some(b) = parse_batch(cfg, "fed.batch_size")? {
            fed.local.batch_size = b;
        }
        read_into!(cfg, number, "fed.client_lr", fed.local.lr, non_negative);
        read_into!(cfg, number, "fed.server_lr", fed.server_lr, positive);
        if let Some(name) = cfg.string("fed.server_optimizer")? {
            fed.server_optimizer = match name.as_str() {
                "sgd" => ServerOptimizer::Sgd,
                "adam" => ServerOptimizer::adam(),
                "rmsprop" => ServerOptimizer::rmsprop(),
                other => return Err(config_error("fed.server_optimizer", format!("expected sgd, adam or rmsprop, got `{other}`"))),
            };
        }
        if let Some(mode) = cfg.string("fed.update_mode")? {
            fed.update_mode = match mode.as_str() {
                "send_weights" => UpdateMode::SendWeights,
                "send_delta" => UpdateMode::SendDelta,
                other => return Err(config_error("fed.update_mode", format!("expected send_weights or send_delta, got `{other}`"))),
            };
        }
        if let Some(every) = cfg.count("fed.eval_every")? {
            if every == 0 {
                return Err(config_error("fed.eval_every", "must be at least 1"));
            }
            fed.eval_every = Some(every);
        }
        read_into!(cfg, boolean, "fed.alg1_literal_normalization", fed.literal_normalization);

        read_into!(cfg, number, "central.lr", self.central.lr, non_negative);
        read_into!(cfg, count, "central.epochs", self.central.epochs);
        if let Some(b) = parse_batch(cfg, "central.batch_size")? {
            self.central.batch_size = b;
        }

        read_into!(cfg, count, "output.summary_window", self.summary_window);
        read_into!(cfg, boolean, "output.record_timing", self.record_timing);
        Ok(())
    }

    fn read_cost_keys(&mut self, cfg: &FlatConfig) -> Result<(), CliError> {
        let p = &mut self.prices;
        for (key, slot) in [
            ("prices.data_out_per_gb", &mut p.data_out_per_gb),
            ("prices.data_in_per_gb", &mut p.data_in_per_gb),
            ("prices.sync_in_per_gb", &mut p.sync_in_per_gb),
            ("prices.storage_per_gb_month", &mut p.storage_per_gb_month),
            ("prices.object_read_per_1k", &mut p.object_read_per_1k),
            ("prices.object_write_per_1k", &mut p.object_write_per_1k),
            ("prices.lb_hourly", &mut p.lb_hourly),
            ("prices.nat_hourly", &mut p.nat_hourly),
            ("prices.dns_monthly_fixed", &mut p.dns_monthly_fixed),
        ] {
            read_into!(cfg, number, key, *slot, non_negative);
        }
        for kind in InstanceKind::ALL {
            let key = format!("prices.instance.{}", kind.name());
            if let Some(v) = cfg.number(&key)? {
                p.instance_hourly.insert(kind, non_negative(&key, v)?);
            }
        }
        if cfg.boolean("prices.zero")? == Some(true) {
            *p = PriceSheet::zero();
        }

        let s = &mut self.fl_scenario;
        for (key, slot) in [
            ("cost.fl.population", &mut s.population),
            ("cost.fl.registered", &mut s.registered),
            ("cost.fl.cohort", &mut s.cohort),
            ("cost.fl.model_size_bytes", &mut s.model_size_bytes),
            ("cost.fl.plan_size_bytes", &mut s.plan_size_bytes),
            ("cost.fl.msg_size_bytes", &mut s.msg_size_bytes),
            ("cost.fl.rounds", &mut s.rounds),
        ] {
            read_into!(cfg, number, key, *slot, non_negative);
        }
        read_into!(cfg, number, "cost.fl.rounds_per_day", s.rounds_per_day, positive);
        read_into!(cfg, number, "cost.fl.month_hours", s.month_hours, positive);

        let c = &mut self.central_scenario;
        for (key, slot) in [
            ("cost.central.population", &mut c.population),
            ("cost.central.sync_bytes_per_device_month", &mut c.sync_bytes_per_device_month),
            ("cost.central.label_bytes_back", &mut c.label_bytes_back),
            ("cost.central.writes_per_device", &mut c.writes_per_device),
        ] {
            read_into!(cfg, number, key, *slot, non_negative);
        }
        read_into!(cfg, number, "cost.central.month_hours", c.month_hours, positive);
        for use_ in &mut c.instances {
            let base = format!("cost.central.{}", use_.kind.name());
            let (count_key, days_key) = (format!("{base}.count"), format!("{base}.days"));
            read_into!(cfg, number, &count_key, use_.count, non_negative);
            read_into!(cfg, number, &days_key, use_.days, non_negative);
        }

        let dimension = cfg.string("sweep.dimension")?;
        let values = cfg.numbers("sweep.values")?;
        match (dimension, values, &mut self.sweep) {
            (Some(name), values, sweep) => {
                let dim = SweepDimension::parse(&name).ok_or_else(|| {
                    config_error("sweep.dimension", format!("expected model_size, rounds or rounds_per_day, got `{name}`"))
                })?;
                let values = match (values, sweep.take()) {
                    (Some(v), _) => v,
                    (None, Some((d, v))) if d == dim => v,
                    _ => return Err(config_error("sweep.values", "missing list of sweep values")),
                };
                *sweep = Some((dim, values));
            }
            (None, Some(values), Some((_, preset))) => *preset = values,
            (None, Some(_), None) => return Err(config_error("sweep.dimension", "missing sweep dimension")),
            (None, None, _) => {}
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(config_error("model.layers", "layer sizes must be a non-empty list of positive integers"));
        }
        if self.fed.num_clients == 0 {
            return Err(config_error("partition.clients", "must be at least 1"));
        }
        if self.samples_per_client == 0 {
            return Err(config_error("partition.samples_per_client", "must be at least 1"));
        }
        if self.samples_sweep.contains(&0) {
            return Err(config_error("partition.samples_sweep", "entries must be at least 1"));
        }
        if !(self.fed.client_fraction > 0.0 && self.fed.client_fraction <= 1.0) {
            return Err(config_error("fed.client_fraction", format!("must be in (0, 1], got {}", self.fed.client_fraction)));
        }
        if self.fed.local.epochs == 0 {
            return Err(config_error("fed.epochs", "must be at least 1"));
        }
        if let Some((dim, values)) = &self.sweep {
            let key = "sweep.values";
            for &v in values {
                match dim {
                    SweepDimension::RoundsPerDay => positive(key, v)?,
                    _ => non_negative(key, v)?,
                };
            }
        }
        if let DataSource::Synthetic { classes, dim, train, test } = self.data {
            if classes < 2 || dim == 0 || train == 0 || test == 0 {
                return Err(config_error("data.synthetic", "needs >= 2 classes and positive dim, train and test sizes"));
            }
        }
        Ok(())
    }

    /// The federated runs this experiment expands to, in output order.
    pub fn fed_runs(&self) -> Vec<FedRunSpec> {
        let mut runs = Vec::new();
        for &seed in &self.seeds {
            let make = |layers: &[usize], partition: PartitionKind, n: usize| {
                let n = if partition == PartitionKind::SingleSample { 1 } else { n };
                FedRunSpec {
                    label: format!("{}_{}_{}_seed{}", presets::layer_label(layers), partition.name(), n, seed),
                    layers: layers.to_vec(),
                    partition,
                    samples_per_client: n,
                    fed: FedConfig { seed, ..self.fed.clone() },
                }
            };
            match self.kind {
                ExperimentKind::Fig2SamplesSweep => {
                    for layers in presets::ARCHITECTURES {
                        for &n in &self.samples_sweep {
                            runs.push(make(layers, self.partition, n));
                        }
                    }
                }
                ExperimentKind::Fig3SingleLabel => {
                    for &n in &self.samples_sweep {
                        runs.push(make(&self.layers, self.partition, n));
                    }
                }
                ExperimentKind::Fig4RoundCurves => {
                    runs.push(make(&self.layers, PartitionKind::SingleSample, 1));
                    runs.push(make(&self.layers, PartitionKind::SingleLabel, 10));
                    runs.push(make(&self.layers, PartitionKind::SingleLabel, 200));
                }
                _ => runs.push(make(&self.layers, self.partition, self.samples_per_client)),
            }
        }
        runs
    }
}
