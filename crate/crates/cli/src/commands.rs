//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Subcommand};
use fedsim_core::cost::{self, CostBreakdown};
use fedsim_core::data::{load_mnist, partition, synth_dataset, Dataset, PartitionPlan};
use fedsim_core::experiment::{layer_label, trailing_accuracy, trailing_client_accuracy};
use fedsim_core::federation::{train_centralized, train_federated};
use fedsim_core::nn::MlpSpec;
use fedsim_core::seed;
use log::info;

use crate::config::FlatConfig;
use crate::experiment::{DataSource, ExperimentConfig, ExperimentKind};
use crate::output::{self, write_file, Manifest};
use crate::CliError;

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML config file, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key path, e.g. `--set fed.rounds=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Federated training (custom run or fig2/fig3/fig4 presets).
    TrainFed(CommonArgs),
    /// Centralized mini-batch SGD baseline.
    TrainCentral(CommonArgs),
    /// Itemized cost breakdowns; cost_fig* presets add their sweep table.
    Cost(CommonArgs),
    /// Cost sweep over model size, rounds or rounds per day.
    Sweep(CommonArgs),
    /// Per-shard label census of a partition.
    PartitionStats(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainFed(_) => "train-fed",
            Command::TrainCentral(_) => "train-central",
            Command::Cost(_) => "cost",
            Command::Sweep(_) => "sweep",
            Command::PartitionStats(_) => "partition-stats",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::TrainFed(a)
            | Command::TrainCentral(a)
            | Command::Cost(a)
            | Command::Sweep(a)
            | Command::PartitionStats(a) => a,
        }
    }

    fn accepts(&self, kind: ExperimentKind) -> bool {
        use ExperimentKind as K;
        match self {
            Command::TrainFed(_) => matches!(kind, K::Custom | K::Fig2SamplesSweep | K::Fig3SingleLabel | K::Fig4RoundCurves),
            Command::TrainCentral(_) => matches!(kind, K::Custom | K::CentralBaseline),
            Command::Cost(_) | Command::Sweep(_) => matches!(kind, K::Custom | K::CostFig6 | K::CostFig7 | K::CostFig8),
            Command::PartitionStats(_) => true,
        }
    }
}

const DESK_SCALE_NOTE: &str =
    "K=100, C=0.1, E=1, B=10, client lr 0.05 and the round counts are desk-scale defaults, not published settings";
const PRICE_NOTE: &str = "default price sheet is calibrated to published totals, not a live price list";

/// Parses the config, runs the command and maintains the manifest.
pub fn run(command: &Command) -> Result<(), CliError> {
    let args = command.args();
    let mut flat = match &args.config {
        Some(path) => FlatConfig::load(path)?,
        None => FlatConfig::default(),
    };
    for assignment in &args.overrides {
        flat.set(assignment)?;
    }
    let exp = ExperimentConfig::from_flat(&flat)?;
    if !command.accepts(exp.kind) {
        return Err(CliError::Config {
            key: "experiment".into(),
            message: format!("`{}` cannot run under `{}`", exp.kind.name(), command.name()),
        });
    }

    let mut notes = Vec::new();
    if exp.kind.uses_desk_scale_defaults() {
        notes.push(DESK_SCALE_NOTE);
    }
    if matches!(command, Command::Cost(_) | Command::Sweep(_)) {
        notes.push(PRICE_NOTE);
    }
    let mut manifest = Manifest::start(&args.out, command.name(), exp.kind.name(), &exp.seeds, &notes, flat.to_json())?;
    let result = match command {
        Command::TrainFed(_) => train_fed(&exp, &args.out, &mut manifest),
        Command::TrainCentral(_) => train_central(&exp, &args.out, &mut manifest),
        Command::Cost(_) => cost_cmd(&exp, &args.out, &mut manifest),
        Command::Sweep(_) => sweep_cmd(&exp, &args.out, &mut manifest),
        Command::PartitionStats(_) => partition_stats(&exp, &args.out, &mut manifest),
    };
    manifest.finish(result.as_ref().err())?;
    result
}

fn load_data(exp: &ExperimentConfig) -> Result<(Dataset, Dataset), CliError> {
    match &exp.data {
        DataSource::Mnist { dir } => {
            info!("loading MNIST from {}", dir.display());
            let split = load_mnist(dir)?;
            Ok((split.train, split.test))
        }
        &DataSource::Synthetic { classes, dim, train, test } => Ok((
            synth_dataset(classes, dim, train, exp.seed)?,
            synth_dataset(classes, dim, test, seed::derive(exp.seed, &[u64::MAX]))?,
        )),
    }
}

fn spec_for(exp: &ExperimentConfig, layers: &[usize], input_dim: usize) -> Result<Arc<MlpSpec>, CliError> {
    let mut sizes = vec![input_dim];
    sizes.extend_from_slice(layers);
    Ok(Arc::new(MlpSpec::new(sizes, exp.activation)?))
}

fn fmt_acc(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn train_fed(exp: &ExperimentConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let runs = exp.fed_runs();
    // Validate every run before loading data or training anything.
    for run in &runs {
        run.fed.validate()?;
    }
    let (train, test) = load_data(exp)?;
    let single = exp.kind == ExperimentKind::Custom;
    let mut summary = Vec::new();
    for run in &runs {
        let plan = PartitionPlan::new(run.partition, run.fed.num_clients, run.samples_per_client, run.fed.seed);
        let shards = partition(&train, &plan)?;
        let spec = spec_for(exp, &run.layers, train.input_dim())?;
        info!("run {} ({} rounds)", run.label, run.fed.rounds);
        let result = train_federated(&spec, &run.fed, &shards, &train, &test)?;
        let relative = if single {
            "rounds.csv".to_owned()
        } else {
            format!("runs/{}.csv", run.label)
        };
        write_file(&out.join(&relative), |w| output::write_rounds(w, &result.metrics, exp.record_timing))?;
        manifest.add_output(relative);

        let last = result.metrics.last();
        let trailing = trailing_accuracy(&result.metrics, exp.summary_window);
        let row = format!(
            "{},{},{},{},{},{},{},{},{},{}",
            run.label,
            layer_label(&run.layers),
            run.partition.name(),
            run.samples_per_client,
            run.fed.seed,
            fmt_acc(last.and_then(|m| m.test_acc)),
            fmt_acc(last.and_then(|m| m.train_acc)),
            fmt_acc(trailing.map(|t| t.1)),
            fmt_acc(trailing.map(|t| t.0)),
            fmt_acc(trailing_client_accuracy(&result.metrics, exp.summary_window)),
        );
        println!("{row}");
        summary.push(row);
    }
    if !single {
        write_file(&out.join("summary.csv"), |w| {
            writeln!(w, "{SUMMARY_HEADER}")?;
            summary.iter().try_for_each(|row| writeln!(w, "{row}"))
        })?;
        manifest.add_output("summary.csv");
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str = "run,layers,partition,samples_per_client,seed,final_test_acc,final_train_acc,\
trailing_test_acc,trailing_train_acc,trailing_client_train_acc";

fn train_central(exp: &ExperimentConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let (train, test) = load_data(exp)?;
    let spec = spec_for(exp, &exp.layers, train.input_dim())?;
    let config = fedsim_core::federation::CentralConfig {
        seed: exp.seed,
        ..exp.central
    };
    info!("central training, {} epochs", config.epochs);
    let (_, metrics) = train_centralized(&spec, &train, &test, config)?;
    write_file(&out.join("rounds.csv"), |w| output::write_rounds(w, &metrics, exp.record_timing))?;
    manifest.add_output("rounds.csv");
    if let Some(m) = metrics.last() {
        println!("epoch {}: train_acc {} test_acc {}", m.round, fmt_acc(m.train_acc), fmt_acc(m.test_acc));
    }
    Ok(())
}

fn validate_costs(exp: &ExperimentConfig) -> Result<(), CliError> {
    exp.prices.validate()?;
    exp.fl_scenario.validate()?;
    Ok(())
}

fn cost_cmd(exp: &ExperimentConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    validate_costs(exp)?;
    let breakdowns: [(&str, CostBreakdown); 3] = [
        ("fl_training", cost::fl_training_cost(&exp.fl_scenario, &exp.prices)),
        ("fl_deployment", cost::fl_deployment_cost(&exp.fl_scenario, &exp.prices)),
        ("central", cost::central_cost(&exp.central_scenario, &exp.prices)),
    ];
    for (name, breakdown) in &breakdowns {
        let relative = format!("cost_{name}.csv");
        write_file(&out.join(&relative), |w| breakdown.write_csv(w))?;
        manifest.add_output(relative);
        println!("== {name} ==\n{breakdown}\n");
    }
    write_file(&out.join("totals.csv"), |w| {
        writeln!(w, "scenario,total_dollars")?;
        breakdowns
            .iter()
            .try_for_each(|(name, b)| writeln!(w, "{name},{:.6}", b.total()))
    })?;
    manifest.add_output("totals.csv");
    if exp.sweep.is_some() {
        sweep_cmd(exp, out, manifest)?;
    }
    Ok(())
}

fn sweep_cmd(exp: &ExperimentConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    validate_costs(exp)?;
    let (dimension, values) = exp.sweep.as_ref().ok_or_else(|| CliError::Config {
        key: "sweep.dimension".into(),
        message: "no sweep configured; pick a cost_fig* experiment or set sweep.dimension and sweep.values".into(),
    })?;
    let rows = cost::sweep(*dimension, values, &exp.fl_scenario, &exp.prices);
    write_file(&out.join("sweep.csv"), |w| cost::write_sweep_csv(*dimension, &rows, w))?;
    manifest.add_output("sweep.csv");
    println!("{:>16} {:>16} {:>16}", dimension.name(), "training $", "deployment $");
    for r in &rows {
        println!("{:>16} {:>16.2} {:>16.2}", r.value, r.training, r.deployment);
    }
    Ok(())
}

fn partition_stats(exp: &ExperimentConfig, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let (train, _) = load_data(exp)?;
    let plan = PartitionPlan::new(exp.partition, exp.fed.num_clients, exp.samples_per_client, exp.seed);
    let shards = partition(&train, &plan)?;
    write_file(&out.join("partition.csv"), |w| output::write_partition(w, &shards))?;
    manifest.add_output("partition.csv");
    println!("{} shards of {} ({})", shards.len(), plan.samples_per_client(), plan.kind.name());
    Ok(())
}
