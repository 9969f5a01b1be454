//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p fedsim-core --test acceptance`; pass criterion
//! numbers (`-- 1 2 11`) to run a subset. The MNIST criteria read the IDX
//! files from `$FEDSIM_DATA_DIR` or `<workspace>/data/mnist`.

use std::collections::HashSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use fedsim_core::cost::{self, Category, CentralScenario, FlScenario, PriceSheet, KB, MB};
use fedsim_core::data::{load_mnist, partition, synth_dataset, ClientShard, Dataset, MnistSplit, PartitionKind, PartitionPlan};
use fedsim_core::experiment::{trailing_accuracy, trailing_client_accuracy, CentralExperiment, FedExperiment, ARCHITECTURES};
use fedsim_core::federation::{run_round, BatchSize, FedConfig, GlobalState, LocalSgd, UpdateMode};
use fedsim_core::nn::{forward_backward, init_params, loss, Batch, MlpSpec, ParamVector, ServerOptimizer};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mnist() -> Result<&'static MnistSplit, String> {
    static DATA: OnceLock<Result<MnistSplit, String>> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = std::env::var_os("FEDSIM_DATA_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
        load_mnist(&dir).map_err(|e| format!("MNIST unavailable ({e}); set FEDSIM_DATA_DIR"))
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn max_abs_diff(a: &ParamVector, b: &ParamVector) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> Batch {
    let inputs = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    Batch::new(inputs, labels).unwrap()
}

/// 1. Backprop against central finite differences.
fn gradient_check() -> Verdict {
    let spec = Arc::new(MlpSpec::relu(&[20, 8, 5]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for net in 0..20 {
        let params = init_params(&spec, 100 + net);
        let batch = random_batch(&mut rng, 6, 20, 5);
        let analytic = forward_backward(&params, &batch).unwrap().grad;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let numeric = (loss(&plus, &batch).unwrap() - loss(&minus, &batch).unwrap()) / (2.0 * h);
            let a = analytic.values()[i];
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            if err > 1e-6 && err > 1e-4 * scale {
                failures += 1;
            }
            worst = worst.max(err);
        }
    }
    check(
        failures == 0,
        format!("20 nets x {} coordinates, {failures} outside tolerance, max |diff| {worst:.2e}", spec.parameter_count()),
    )
}

fn uneven_shards(dataset: &Dataset, sizes: &[usize]) -> Vec<ClientShard> {
    let mut next = 0;
    sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let shard = ClientShard::new(k, (next..next + n).collect(), dataset);
            next += n;
            shard
        })
        .collect()
}

/// 2. FedSGD with C=1, E=1, B=full equals full-batch gradient descent.
fn fedsgd_oracle() -> Verdict {
    let data = synth_dataset(5, 12, 300, 21).unwrap();
    let shards = uneven_shards(&data, &[5, 17, 40, 3, 61, 24, 90, 60]);
    let spec = Arc::new(MlpSpec::relu(&[12, 9, 5]).unwrap());
    let config = FedConfig {
        num_clients: shards.len(),
        client_fraction: 1.0,
        local: LocalSgd { epochs: 1, batch_size: BatchSize::Full, lr: 0.3 },
        seed: 4,
        ..FedConfig::default()
    };
    let all: Vec<usize> = (0..300).collect();
    let full = data.batch(&all).unwrap();
    let mut state = GlobalState::new(init_params(&spec, 4), &config);
    let mut central = state.params.clone();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        state = run_round(&state, &config, &shards, &data).unwrap().0;
        let grad = forward_backward(&central, &full).unwrap().grad;
        central.apply_sgd(&grad, 0.3).unwrap();
        worst = worst.max(max_abs_diff(&state.params, &central));
    }
    check(worst <= 1e-9, format!("10 rounds, max |diff| {worst:.2e}"))
}

/// 3. Single-sample shards with E=1 are one SGD step on the selected samples.
fn single_sample_oracle() -> Verdict {
    let data = synth_dataset(4, 10, 200, 31).unwrap();
    let plan = PartitionPlan::new(PartitionKind::SingleSample, 60, 1, 5);
    let shards = partition(&data, &plan).unwrap();
    let spec = Arc::new(MlpSpec::relu(&[10, 7, 4]).unwrap());
    let config = FedConfig {
        num_clients: 60,
        client_fraction: 0.2,
        local: LocalSgd { epochs: 1, batch_size: BatchSize::Fixed(1), lr: 0.2 },
        seed: 9,
        ..FedConfig::default()
    };
    let mut state = GlobalState::new(init_params(&spec, 9), &config);
    let mut sgd = state.params.clone();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (next, metrics) = run_round(&state, &config, &shards, &data).unwrap();
        let samples: Vec<usize> = metrics.selected.iter().map(|&k| shards[k].indices[0]).collect();
        let grad = forward_backward(&sgd, &data.batch(&samples).unwrap()).unwrap().grad;
        sgd.apply_sgd(&grad, 0.2).unwrap();
        state = next;
        worst = worst.max(max_abs_diff(&state.params, &sgd));
    }
    check(worst <= 1e-9, format!("10 rounds of 12 clients, max |diff| {worst:.2e}"))
}

/// 4. Delta updates with server SGD at rate 1 track weight averaging.
fn delta_equivalence() -> Verdict {
    let data = synth_dataset(5, 12, 400, 41).unwrap();
    let shards = partition(&data, &PartitionPlan::new(PartitionKind::SingleLabel, 20, 15, 6)).unwrap();
    let spec = Arc::new(MlpSpec::relu(&[12, 10, 5]).unwrap());
    let weights = FedConfig {
        num_clients: 20,
        client_fraction: 0.3,
        local: LocalSgd { epochs: 2, batch_size: BatchSize::Fixed(4), lr: 0.1 },
        seed: 12,
        ..FedConfig::default()
    };
    let delta = FedConfig {
        update_mode: UpdateMode::SendDelta,
        server_optimizer: ServerOptimizer::Sgd,
        server_lr: 1.0,
        ..weights.clone()
    };
    let init = init_params(&spec, 12);
    let mut a = GlobalState::new(init.clone(), &weights);
    let mut b = GlobalState::new(init, &delta);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        a = run_round(&a, &weights, &shards, &data).unwrap().0;
        b = run_round(&b, &delta, &shards, &data).unwrap().0;
        worst = worst.max(max_abs_diff(&a.params, &b.params));
    }
    check(worst <= 1e-9, format!("20 rounds, max |diff| {worst:.2e}"))
}

/// 5. Partition invariants over random plans.
fn partition_invariants() -> Verdict {
    let data = synth_dataset(10, 4, 1500, 51).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let kinds = [PartitionKind::Iid, PartitionKind::SingleLabel, PartitionKind::SingleSample];
    let mut problems = Vec::new();
    for trial in 0..100 {
        let kind = kinds[rng.gen_range(0..3)];
        let plan = PartitionPlan::new(kind, rng.gen_range(1..=40), rng.gen_range(1..=15), rng.gen());
        let shards = match partition(&data, &plan) {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("plan {trial}: {e}"));
                continue;
            }
        };
        let mut seen = HashSet::new();
        for shard in &shards {
            let mut census = vec![0; data.num_classes()];
            for &i in &shard.indices {
                census[data.labels()[i]] += 1;
                if !seen.insert(i) {
                    problems.push(format!("plan {trial}: sample {i} assigned twice"));
                }
            }
            if census != shard.label_census {
                problems.push(format!("plan {trial}: census of client {} is wrong", shard.client_id));
            }
            if shard.num_samples() != plan.samples_per_client() {
                problems.push(format!("plan {trial}: client {} holds {} samples", shard.client_id, shard.num_samples()));
            }
            if kind == PartitionKind::SingleLabel && census.iter().filter(|&&c| c > 0).count() != 1 {
                problems.push(format!("plan {trial}: client {} mixes labels", shard.client_id));
            }
        }
        if shards.len() != plan.num_clients {
            problems.push(format!("plan {trial}: {} shards for {} clients", shards.len(), plan.num_clients));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() { "100 random plans".into() } else { problems[..problems.len().min(3)].join("; ") },
    )
}

fn random_scenario(rng: &mut ChaCha8Rng) -> FlScenario {
    FlScenario {
        population: rng.gen_range(0.0..2e7),
        cohort: rng.gen_range(0.0..2000.0),
        model_size_bytes: rng.gen_range(0.0..600.0 * MB),
        rounds: rng.gen_range(0..6000) as f64,
        rounds_per_day: rng.gen_range(1.0..500.0),
        ..FlScenario::default()
    }
}

/// 6. Cost model structure.
fn cost_properties() -> Verdict {
    let p = PriceSheet::default();
    let zero = PriceSheet::zero();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut problems = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    for trial in 0..200 {
        let s = random_scenario(&mut rng);
        let train = cost::fl_training_cost(&s, &p);
        let deploy = cost::fl_deployment_cost(&s, &p);
        for b in [&train, &deploy] {
            let items: f64 = b.items.iter().map(|i| i.dollars).sum();
            let by_category: f64 = [Category::Communication, Category::Compute, Category::Storage, Category::Fixed]
                .into_iter()
                .map(|c| b.category_total(c))
                .sum();
            if !close(b.total(), items) || !close(b.total(), by_category) {
                problems.push(format!("scenario {trial}: total is not the sum of its items"));
            }
        }
        if cost::fl_training_cost(&s, &zero).total() != 0.0 || cost::fl_deployment_cost(&s, &zero).total() != 0.0 {
            problems.push(format!("scenario {trial}: zero sheet costs money"));
        }
        let bigger = [
            FlScenario { model_size_bytes: s.model_size_bytes * 1.5 + 1.0, ..s.clone() },
            FlScenario { rounds: s.rounds + 1.0, ..s.clone() },
            FlScenario { population: s.population * 1.5 + 1.0, ..s.clone() },
        ];
        for (what, t) in ["model_size", "rounds", "population"].iter().zip(&bigger) {
            if cost::fl_training_cost(t, &p).total() < train.total() || cost::fl_deployment_cost(t, &p).total() < deploy.total() {
                problems.push(format!("scenario {trial}: cost decreased with {what}"));
            }
        }
        let doubled = cost::fl_training_cost(&FlScenario { cohort: 2.0 * s.cohort, ..s.clone() }, &p);
        for (a, b) in train.items.iter().zip(&doubled.items) {
            let expected = if a.category == Category::Communication { 2.0 * a.dollars } else { a.dollars };
            if !close(b.dollars, expected) {
                problems.push(format!("scenario {trial}: {} not linear in cohort", a.name));
            }
        }
    }
    if cost::central_cost(&CentralScenario::default(), &zero).total() != 0.0 {
        problems.push("central scenario costs money under the zero sheet".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() { "200 random scenarios".into() } else { problems[..problems.len().min(3)].join("; ") },
    )
}

const SEEDS: [u64; 3] = [1, 2, 3];

/// 7. More IID samples per device give higher test accuracy.
fn fig2_trend() -> Verdict {
    let data = mnist()?;
    let samples = [1, 50, 200];
    let mut ok = true;
    let mut lines = Vec::new();
    for layers in ARCHITECTURES {
        let mut per_seed = Vec::new();
        for seed in SEEDS {
            let accs: Vec<f64> = samples
                .iter()
                .map(|&n| {
                    let mut exp = FedExperiment::new(layers, PartitionKind::Iid, n, 100, seed);
                    exp.fed.eval_every = Some(exp.fed.rounds);
                    let run = exp.run(&data.train, &data.test).map_err(|e| e.to_string())?;
                    Ok(run.metrics.last().and_then(|m| m.test_acc).unwrap_or(0.0))
                })
                .collect::<Result<_, String>>()?;
            let increasing = accs.windows(2).all(|w| w[1] > w[0]);
            let margin = accs[2] - accs[0];
            ok &= increasing && margin >= 0.02;
            per_seed.push(format!("[{:.3} {:.3} {:.3}]", accs[0], accs[1], accs[2]));
        }
        lines.push(format!("{}: {}", fedsim_core::experiment::layer_label(layers), per_seed.join(" ")));
    }
    check(ok, format!("test acc at 1/50/200 samples per seed; {}", lines.join("; ")))
}

/// 8. Single-label shards: large shards overfit, small ones do not.
fn fig3_overfitting() -> Verdict {
    let data = mnist()?;
    let window = 10;
    let mut gaps = Vec::new();
    let mut detail = Vec::new();
    for n in [10, 200] {
        let mut client_gap = 0.0;
        let mut global_gap = 0.0;
        for seed in SEEDS {
            let exp = FedExperiment::new(&[500, 200, 10], PartitionKind::SingleLabel, n, 100, seed);
            let run = exp.run_trailing(&data.train, &data.test, window).map_err(|e| e.to_string())?;
            let (train, test) = trailing_accuracy(&run.metrics, window).ok_or("no evaluated rounds")?;
            let client = trailing_client_accuracy(&run.metrics, window).ok_or("no rounds")?;
            client_gap += (client - test) / SEEDS.len() as f64;
            global_gap += (train - test) / SEEDS.len() as f64;
        }
        gaps.push(client_gap);
        detail.push(format!(
            "{n} samples: on-device train - test {:.1} pts (global-model train - test {:.1} pts)",
            100.0 * client_gap,
            100.0 * global_gap
        ));
    }
    check(gaps[1] >= 0.10 && gaps[0] <= 0.05, format!("mean of last {window} rounds, 3 seeds; {}", detail.join("; ")))
}

/// 9. Single-sample devices learn slower than 10-sample single-label devices.
fn fig4_underfitting() -> Verdict {
    let data = mnist()?;
    let mut ok = true;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let curve = |kind, n| -> Result<Vec<(usize, f64)>, String> {
            let mut exp = FedExperiment::new(&[500, 200, 10], kind, n, 300, seed);
            exp.fed.eval_every = Some(25);
            let run = exp.run(&data.train, &data.test).map_err(|e| e.to_string())?;
            Ok(run.metrics.iter().filter_map(|m| Some((m.round, m.test_acc?))).filter(|(r, _)| *r >= 50).collect())
        };
        let single = curve(PartitionKind::SingleSample, 1)?;
        let ten = curve(PartitionKind::SingleLabel, 10)?;
        let below = single.iter().zip(&ten).filter(|(a, b)| a.1 < b.1).count();
        ok &= below == single.len() && !single.is_empty();
        let (ls, lt) = (single.last().map_or(0.0, |x| x.1), ten.last().map_or(0.0, |x| x.1));
        detail.push(format!("seed {seed}: below at {below}/{} checkpoints, round 300 {ls:.3} vs {lt:.3}", single.len()));
    }
    check(ok, detail.join("; "))
}

/// 10. Centralized [500,200,10] beats 95% within 5 epochs.
fn central_sanity() -> Verdict {
    let data = mnist()?;
    let metrics = CentralExperiment::new(&[500, 200, 10], 5, 1)
        .run(&data.train, &data.test)
        .map_err(|e| e.to_string())?;
    let accs: Vec<String> = metrics.iter().map(|m| format!("{:.4}", m.test_acc.unwrap_or(0.0))).collect();
    let best = metrics.iter().filter_map(|m| m.test_acc).fold(0.0, f64::max);
    check(best > 0.95, format!("test acc per epoch {}", accs.join(" ")))
}

fn within(actual: f64, target: f64, tol: f64) -> bool {
    (actual - target).abs() <= tol * target
}

/// 11. Centralized pipeline costs and the sync-rate calibration identity.
fn central_cost_numbers() -> Verdict {
    let p = PriceSheet::default();
    let low = CentralScenario::default();
    let high = CentralScenario { sync_bytes_per_device_month: 1.0 * MB, ..low.clone() };
    let a = cost::central_cost(&low, &p).total();
    let b = cost::central_cost(&high, &p).total();
    let rate = cost::calibrate_sync_rate(&low, &high, 3769.70 - 1967.90, &p).map_err(|e| e.to_string())?;
    let tuned = PriceSheet { sync_in_per_gb: rate, ..p };
    let delta = cost::central_cost(&high, &tuned).total() - cost::central_cost(&low, &tuned).total();
    check(
        within(a, 1967.90, 0.10) && within(b, 3769.70, 0.10) && (delta - 1801.80).abs() < 1e-9,
        format!("250 KB ${a:.2}, 1 MB ${b:.2}, calibrated sync ${rate:.4}/GB gives delta ${delta:.6}"),
    )
}

/// 12. Model-size sweep: flat training cost, exploding deployment transfer.
fn fig6_shape() -> Verdict {
    let p = PriceSheet::default();
    let base = FlScenario::default();
    let rows = cost::sweep(cost::SweepDimension::ModelSize, &[15.0 * KB, 500.0 * KB, 1000.0 * KB], &base, &p);
    let near = rows.iter().zip([525.68, 533.15, 540.85]).all(|(r, t)| within(r.training, t, 0.10));
    let lo = rows.iter().map(|r| r.training).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.training).fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    let transfer = |bytes: f64| {
        let b = cost::fl_deployment_cost(&FlScenario { model_size_bytes: bytes, ..base.clone() }, &p);
        b.item("model_transfer").map_or(0.0, |i| i.dollars)
    };
    let ratio = transfer(15000.0 * KB) / transfer(15.0 * KB);
    let costs: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.training)).collect();
    check(
        near && spread < 0.05 && ratio >= 500.0,
        format!("training ${}, spread {:.2}%, deployment transfer ratio {ratio:.0}x", costs.join("/"), 100.0 * spread),
    )
}

/// 13. Training cost of the small published model sizes.
fn table1_costs() -> Verdict {
    let costs = cost::table1_training_costs(&[1.61 * MB, 24.03 * MB], &FlScenario::long_run(), &PriceSheet::default());
    check(
        within(costs[0], 1111.0, 0.15) && within(costs[1], 6290.0, 0.15),
        format!("3000 rounds at 200/day: 1.61 MB ${:.2}, 24.03 MB ${:.2}", costs[0], costs[1]),
    )
}

/// 14. Rounds and rounds-per-day sweeps.
fn fig7_fig8_shapes() -> Verdict {
    let p = PriceSheet::default();
    let (dim, values, base) = cost::fig7_preset();
    let rounds = cost::sweep(dim, &values, &base, &p);
    let (dim, values, base) = cost::fig8_preset();
    let per_day = cost::sweep(dim, &values, &base, &p);
    let up = rounds.windows(2).all(|w| w[1].training > w[0].training);
    let down = per_day.windows(2).all(|w| w[1].training <= w[0].training);
    let fmt = |rows: &[cost::SweepRow]| rows.iter().map(|r| format!("{}:{:.0}", r.value, r.training)).collect::<Vec<_>>().join(" ");
    check(up && down, format!("rounds {}; rounds/day {}", fmt(&rounds), fmt(&per_day)))
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 14] = [
        (1, "gradient matches finite differences", gradient_check),
        (2, "FedSGD equals full-batch gradient descent", fedsgd_oracle),
        (3, "single-sample round equals mini-batch SGD step", single_sample_oracle),
        (4, "delta updates match weight averaging", delta_equivalence),
        (5, "partition invariants", partition_invariants),
        (6, "cost model properties", cost_properties),
        (7, "test accuracy grows with IID samples per device", fig2_trend),
        (8, "single-label overfitting grows with shard size", fig3_overfitting),
        (9, "single-sample devices underfit", fig4_underfitting),
        (10, "centralized baseline above 95%", central_sanity),
        (11, "centralized cost figures", central_cost_numbers),
        (12, "model-size sweep shape", fig6_shape),
        (13, "training cost of published model sizes", table1_costs),
        (14, "rounds and rounds-per-day sweep shapes", fig7_fig8_shapes),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        let (status, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} {status} {name} ({secs:.1}s): {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
