//! Dollar-cost model for federated training, federated deployment and a
//! centralized sync-and-train pipeline.
//!
//! Sizes are decimal: 1 KB = 1e3 B, 1 GB = 1e9 B.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use crate::error::{Error, Result};

pub const KB: f64 = 1e3;
pub const MB: f64 = 1e6;
pub const GB: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstanceKind {
    Portal,
    Aggregator,
    Training,
    Ingestion,
    Tagging,
    Monitoring,
    Jumpbox,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 7] = [
        InstanceKind::Portal,
        InstanceKind::Aggregator,
        InstanceKind::Training,
        InstanceKind::Ingestion,
        InstanceKind::Tagging,
        InstanceKind::Monitoring,
        InstanceKind::Jumpbox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstanceKind::Portal => "portal",
            InstanceKind::Aggregator => "aggregator",
            InstanceKind::Training => "training",
            InstanceKind::Ingestion => "ingestion",
            InstanceKind::Tagging => "tagging",
            InstanceKind::Monitoring => "monitoring",
            InstanceKind::Jumpbox => "jumpbox",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Unit prices. All values are dollars and must be finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSheet {
    /// Cloud to internet transfer.
    pub data_out_per_gb: f64,
    /// Internet to cloud transfer (federated uploads).
    pub data_in_per_gb: f64,
    /// Device data sync into the centralized pipeline.
    pub sync_in_per_gb: f64,
    pub storage_per_gb_month: f64,
    pub object_read_per_1k: f64,
    pub object_write_per_1k: f64,
    pub instance_hourly: BTreeMap<InstanceKind, f64>,
    pub lb_hourly: f64,
    pub nat_hourly: f64,
    pub dns_monthly_fixed: f64,
}

impl Default for PriceSheet {
    /// Calibrated sheet. Instance rates for portal, aggregator, training,
    /// monitoring and jumpbox are on-demand list prices; transfer, NAT, load
    /// balancer, ingestion, tagging and sync rates are fitted to the
    /// published totals.
    fn default() -> Self {
        let instance_hourly = BTreeMap::from([
            (InstanceKind::Portal, 0.20),
            (InstanceKind::Aggregator, 0.17),
            (InstanceKind::Training, 0.20),
            (InstanceKind::Ingestion, 1.53),
            (InstanceKind::Tagging, 2.4093),
            (InstanceKind::Monitoring, 0.1664),
            (InstanceKind::Jumpbox, 0.0416),
        ]);
        Self {
            data_out_per_gb: 0.154,
            data_in_per_gb: 0.0,
            sync_in_per_gb: 0.1772,
            storage_per_gb_month: 0.023,
            object_read_per_1k: 0.0004,
            object_write_per_1k: 0.005,
            instance_hourly,
            lb_hourly: 0.2786,
            nat_hourly: 0.2639,
            dns_monthly_fixed: 3.0,
        }
    }
}

impl PriceSheet {
    /// Every price zero.
    pub fn zero() -> Self {
        Self {
            data_out_per_gb: 0.0,
            data_in_per_gb: 0.0,
            sync_in_per_gb: 0.0,
            storage_per_gb_month: 0.0,
            object_read_per_1k: 0.0,
            object_write_per_1k: 0.0,
            instance_hourly: InstanceKind::ALL.into_iter().map(|k| (k, 0.0)).collect(),
            lb_hourly: 0.0,
            nat_hourly: 0.0,
            dns_monthly_fixed: 0.0,
        }
    }

    /// Hourly rate of `kind`; kinds missing from the map cost nothing.
    pub fn hourly(&self, kind: InstanceKind) -> f64 {
        self.instance_hourly.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("data_out_per_gb", self.data_out_per_gb),
            ("data_in_per_gb", self.data_in_per_gb),
            ("sync_in_per_gb", self.sync_in_per_gb),
            ("storage_per_gb_month", self.storage_per_gb_month),
            ("object_read_per_1k", self.object_read_per_1k),
            ("object_write_per_1k", self.object_write_per_1k),
            ("lb_hourly", self.lb_hourly),
            ("nat_hourly", self.nat_hourly),
            ("dns_monthly_fixed", self.dns_monthly_fixed),
        ];
        let instances = self.instance_hourly.iter().map(|(k, &v)| (k.name(), v));
        for (name, value) in scalars.into_iter().chain(instances) {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "price {name} must be a non-negative number, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Federated training and deployment inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FlScenario {
    /// Devices that receive the deployed model.
    pub population: f64,
    /// Devices enrolled for training (informational; the cohort drives cost).
    pub registered: f64,
    /// Devices per round.
    pub cohort: f64,
    pub model_size_bytes: f64,
    /// Training-plan payload shipped alongside the model.
    pub plan_size_bytes: f64,
    /// Readiness pings and aggregation acks.
    pub msg_size_bytes: f64,
    pub rounds: f64,
    pub rounds_per_day: f64,
    pub month_hours: f64,
}

impl Default for FlScenario {
    /// 500 KB model, 200 rounds at 100 rounds per day.
    fn default() -> Self {
        Self {
            population: 12e6,
            registered: 500e3,
            cohort: 500.0,
            model_size_bytes: 500.0 * KB,
            plan_size_bytes: 50.0 * KB,
            msg_size_bytes: 1.0 * KB,
            rounds: 200.0,
            rounds_per_day: 100.0,
            month_hours: 730.0,
        }
    }
}

impl FlScenario {
    /// Base of the rounds sweep and the per-model training costs: 3000 rounds
    /// at 200 rounds per day.
    pub fn long_run() -> Self {
        Self {
            rounds: 3000.0,
            rounds_per_day: 200.0,
            ..Self::default()
        }
    }

    pub fn training_hours(&self) -> f64 {
        if self.rounds == 0.0 {
            0.0
        } else {
            self.rounds / self.rounds_per_day * 24.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("population", self.population),
            ("registered", self.registered),
            ("cohort", self.cohort),
            ("model_size_bytes", self.model_size_bytes),
            ("plan_size_bytes", self.plan_size_bytes),
            ("msg_size_bytes", self.msg_size_bytes),
            ("rounds", self.rounds),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a non-negative number, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("rounds_per_day", self.rounds_per_day),
            ("month_hours", self.month_hours),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Instances of one kind running for a number of whole days.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceUse {
    pub kind: InstanceKind,
    pub count: f64,
    pub days: f64,
}

impl InstanceUse {
    pub fn hours(&self) -> f64 {
        self.count * self.days * 24.0
    }
}

/// Centralized pipeline: devices sync raw data monthly, the cloud ingests,
/// tags and trains, then syncs inferred labels back.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralScenario {
    pub population: f64,
    pub sync_bytes_per_device_month: f64,
    pub label_bytes_back: f64,
    /// Object writes per device per month.
    pub writes_per_device: f64,
    pub instances: Vec<InstanceUse>,
    pub month_hours: f64,
}

impl Default for CentralScenario {
    fn default() -> Self {
        Self {
            population: 12e6,
            sync_bytes_per_device_month: 250.0 * KB,
            label_bytes_back: 100.0,
            writes_per_device: 1.0,
            instances: vec![
                InstanceUse { kind: InstanceKind::Ingestion, count: 3.0, days: 1.0 },
                InstanceUse { kind: InstanceKind::Training, count: 2.0, days: 1.0 },
                InstanceUse { kind: InstanceKind::Tagging, count: 3.0, days: 4.0 },
            ],
            month_hours: 730.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Communication,
    Compute,
    Storage,
    Fixed,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Communication => "communication",
            Category::Compute => "compute",
            Category::Storage => "storage",
            Category::Fixed => "fixed",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineItem {
    pub name: String,
    pub category: Category,
    pub quantity: f64,
    /// Unit of `quantity`, e.g. `GB` or `h`.
    pub unit: &'static str,
    pub unit_price: f64,
    pub dollars: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostBreakdown {
    pub items: Vec<LineItem>,
}

impl CostBreakdown {
    fn push(&mut self, name: &str, category: Category, quantity: f64, unit: &'static str, unit_price: f64) {
        self.items.push(LineItem {
            name: name.to_owned(),
            category,
            quantity,
            unit,
            unit_price,
            dollars: quantity * unit_price,
        });
    }

    pub fn total(&self) -> f64 {
        self.items.iter().map(|i| i.dollars).sum()
    }

    pub fn category_total(&self, category: Category) -> f64 {
        self.items
            .iter()
            .filter(|i| i.category == category)
            .map(|i| i.dollars)
            .sum()
    }

    pub fn item(&self, name: &str) -> Option<&LineItem> {
        self.items.iter().find(|i| i.name == name)
    }

    /// CSV with header `item,name,category,quantity,unit_price,dollars`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "item,name,category,quantity,unit_price,dollars")?;
        for (i, item) in self.items.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{:.6}",
                i + 1,
                item.name,
                item.category,
                item.quantity,
                item.unit_price,
                item.dollars
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for CostBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28} {:<14} {:>16} {:>12} {:>12}",
            "item", "category", "quantity", "unit price", "dollars"
        )?;
        for item in &self.items {
            writeln!(
                f,
                "{:<28} {:<14} {:>12.3} {:<3} {:>12.6} {:>12.2}",
                item.name, item.category, item.quantity, item.unit, item.unit_price, item.dollars
            )?;
        }
        write!(f, "{:<28} {:<14} {:>16} {:>12} {:>12.2}", "total", "", "", "", self.total())
    }
}

fn push_fixed_infra(out: &mut CostBreakdown, p: &PriceSheet, months: f64, month_hours: f64) {
    let hours = months * month_hours;
    for kind in [InstanceKind::Portal, InstanceKind::Monitoring, InstanceKind::Jumpbox] {
        out.push(kind.name(), Category::Fixed, hours, "h", p.hourly(kind));
    }
    out.push("nat", Category::Fixed, hours, "h", p.nat_hourly);
    out.push("dns", Category::Fixed, months, "mo", p.dns_monthly_fixed);
}

/// Whole months of always-on infrastructure needed to cover `hours`.
fn billed_months(hours: f64, month_hours: f64) -> f64 {
    (hours / month_hours).ceil().max(1.0)
}

/// One federated training campaign.
///
/// Per round and per cohort device: a readiness ping, the model plus plan
/// download, the update upload and an aggregation ack. Aggregator, training
/// server and load balancer run for the training duration; the remaining
/// infrastructure is billed per started month.
pub fn fl_training_cost(s: &FlScenario, p: &PriceSheet) -> CostBreakdown {
    let per_round = s.rounds * s.cohort;
    let mut out = CostBreakdown::default();
    out.push("readiness_pings", Category::Communication, per_round * s.msg_size_bytes / GB, "GB", p.data_out_per_gb);
    out.push(
        "model_plan_download",
        Category::Communication,
        per_round * (s.model_size_bytes + s.plan_size_bytes) / GB,
        "GB",
        p.data_out_per_gb,
    );
    out.push("update_upload", Category::Communication, per_round * s.model_size_bytes / GB, "GB", p.data_in_per_gb);
    out.push("aggregation_acks", Category::Communication, per_round * s.msg_size_bytes / GB, "GB", p.data_out_per_gb);

    let hours = s.training_hours();
    for kind in [InstanceKind::Aggregator, InstanceKind::Training] {
        out.push(kind.name(), Category::Compute, hours, "h", p.hourly(kind));
    }
    out.push("load_balancer", Category::Compute, hours, "h", p.lb_hourly);
    push_fixed_infra(&mut out, p, billed_months(hours, s.month_hours), s.month_hours);
    out
}

/// Shipping the final model to every device straight from object storage.
pub fn fl_deployment_cost(s: &FlScenario, p: &PriceSheet) -> CostBreakdown {
    let mut out = CostBreakdown::default();
    out.push("model_transfer", Category::Communication, s.population * s.model_size_bytes / GB, "GB", p.data_out_per_gb);
    out.push("model_reads", Category::Storage, s.population / 1e3, "1k", p.object_read_per_1k);
    out.push("model_storage", Category::Storage, s.model_size_bytes / GB, "GB-mo", p.storage_per_gb_month);
    out
}

/// One month of the centralized pipeline.
pub fn central_cost(s: &CentralScenario, p: &PriceSheet) -> CostBreakdown {
    let synced_gb = s.population * s.sync_bytes_per_device_month / GB;
    let mut out = CostBreakdown::default();
    out.push("data_sync", Category::Communication, synced_gb, "GB", p.sync_in_per_gb);
    out.push("object_writes", Category::Storage, s.population * s.writes_per_device / 1e3, "1k", p.object_write_per_1k);
    out.push("data_storage", Category::Storage, synced_gb, "GB-mo", p.storage_per_gb_month);
    for use_ in &s.instances {
        let name = format!("{}_x{}", use_.kind.name(), use_.count);
        out.push(&name, Category::Compute, use_.hours(), "h", p.hourly(use_.kind));
    }
    out.push("label_sync_back", Category::Communication, s.population * s.label_bytes_back / GB, "GB", p.data_out_per_gb);
    let busiest = s
        .instances
        .iter()
        .map(|u| u.days * 24.0)
        .fold(0.0, f64::max);
    push_fixed_infra(&mut out, p, billed_months(busiest, s.month_hours), s.month_hours);
    out
}

/// Sync rate that makes `central_cost(high) − central_cost(low)` equal
/// `delta` exactly, all other prices taken from `p`.
pub fn calibrate_sync_rate(low: &CentralScenario, high: &CentralScenario, delta: f64, p: &PriceSheet) -> Result<f64> {
    let gb = |s: &CentralScenario| s.population * s.sync_bytes_per_device_month / GB;
    let extra_gb = gb(high) - gb(low);
    if extra_gb <= 0.0 {
        return Err(Error::InvalidConfig(
            "sync calibration needs the high scenario to sync more data".into(),
        ));
    }
    let unpriced = PriceSheet {
        sync_in_per_gb: 0.0,
        ..p.clone()
    };
    let residual = central_cost(high, &unpriced).total() - central_cost(low, &unpriced).total();
    Ok((delta - residual) / extra_gb)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepDimension {
    ModelSize,
    Rounds,
    RoundsPerDay,
}

impl SweepDimension {
    pub fn name(self) -> &'static str {
        match self {
            SweepDimension::ModelSize => "model_size",
            SweepDimension::Rounds => "rounds",
            SweepDimension::RoundsPerDay => "rounds_per_day",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::ModelSize, Self::Rounds, Self::RoundsPerDay]
            .into_iter()
            .find(|d| d.name() == name)
    }

    fn apply(self, base: &FlScenario, value: f64) -> FlScenario {
        let mut s = base.clone();
        match self {
            SweepDimension::ModelSize => s.model_size_bytes = value,
            SweepDimension::Rounds => s.rounds = value,
            SweepDimension::RoundsPerDay => s.rounds_per_day = value,
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub training: f64,
    pub deployment: f64,
}

pub fn sweep(dimension: SweepDimension, values: &[f64], base: &FlScenario, p: &PriceSheet) -> Vec<SweepRow> {
    values
        .iter()
        .map(|&value| {
            let s = dimension.apply(base, value);
            SweepRow {
                value,
                training: fl_training_cost(&s, p).total(),
                deployment: fl_deployment_cost(&s, p).total(),
            }
        })
        .collect()
}

/// CSV with header `<dimension>,training_cost,deployment_cost`.
pub fn write_sweep_csv<W: Write>(dimension: SweepDimension, rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{},training_cost,deployment_cost", dimension.name())?;
    for row in rows {
        writeln!(out, "{},{:.6},{:.6}", row.value, row.training, row.deployment)?;
    }
    Ok(())
}

/// Training cost of each model size under `base`.
pub fn table1_training_costs(model_sizes: &[f64], base: &FlScenario, p: &PriceSheet) -> Vec<f64> {
    sweep(SweepDimension::ModelSize, model_sizes, base, p)
        .into_iter()
        .map(|r| r.training)
        .collect()
}

/// Model-size sweep: 15 KB to 15 MB, 200 rounds at 100 per day.
pub fn fig6_preset() -> (SweepDimension, Vec<f64>, FlScenario) {
    (
        SweepDimension::ModelSize,
        vec![15.0 * KB, 500.0 * KB, 1000.0 * KB, 15000.0 * KB],
        FlScenario::default(),
    )
}

/// Rounds sweep at 500 KB and 200 rounds per day.
pub fn fig7_preset() -> (SweepDimension, Vec<f64>, FlScenario) {
    (
        SweepDimension::Rounds,
        vec![100.0, 500.0, 1000.0, 2000.0, 3000.0, 5000.0],
        FlScenario::long_run(),
    )
}

/// Rounds-per-day sweep at 3000 rounds.
pub fn fig8_preset() -> (SweepDimension, Vec<f64>, FlScenario) {
    (
        SweepDimension::RoundsPerDay,
        vec![25.0, 50.0, 100.0, 200.0, 300.0, 500.0],
        FlScenario::long_run(),
    )
}
