//! CSV emission and run manifests.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use fedsim_core::data::ClientShard;
use fedsim_core::federation::RoundMetrics;
use serde_json::{json, Value};

use crate::CliError;

pub const ROUNDS_HEADER: &str = "round,train_acc,test_acc,mean_client_loss,elapsed_s,client_train_acc";
pub const PARTITION_HEADER: &str = "client_id,n_k,dominant_label,entropy_bits";

pub fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Creates `path` (and its parent directories) and fills it via `body`.
pub fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    let file = fs::File::create(path).map_err(io_error(path))?;
    let mut out = BufWriter::new(file);
    body(&mut out).and_then(|_| out.flush()).map_err(io_error(path))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// One row per round; accuracies are blank on rounds that were not
/// evaluated and `elapsed_s` is blank unless timing is recorded.
pub fn write_rounds(out: &mut dyn Write, metrics: &[RoundMetrics], record_timing: bool) -> std::io::Result<()> {
    writeln!(out, "{ROUNDS_HEADER}")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{:.6},{},{:.6}",
            m.round,
            opt(m.train_acc),
            opt(m.test_acc),
            m.mean_client_loss,
            opt(record_timing.then_some(m.elapsed_s)),
            m.client_train_acc,
        )?;
    }
    Ok(())
}

pub fn write_partition(out: &mut dyn Write, shards: &[ClientShard]) -> std::io::Result<()> {
    writeln!(out, "{PARTITION_HEADER}")?;
    for s in shards {
        writeln!(
            out,
            "{},{},{},{:.6}",
            s.client_id,
            s.num_samples(),
            s.dominant_label(),
            s.census_entropy()
        )?;
    }
    Ok(())
}

/// Reproducibility record, written when a run starts and rewritten when it ends.
#[derive(Debug)]
pub struct Manifest {
    path: PathBuf,
    doc: Value,
    outputs: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Manifest {
    pub fn start(out_dir: &Path, command: &str, experiment: &str, seeds: &[u64], notes: &[&str], config: Value) -> Result<Self, CliError> {
        let manifest = Self {
            path: out_dir.join("manifest.json"),
            doc: json!({
                "tool": "fedsim",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command,
                "experiment": experiment,
                "seeds": seeds,
                "notes": notes,
                "config": config,
                "started_at": now(),
                "finished_at": Value::Null,
                "status": "running",
                "outputs": [],
            }),
            outputs: Vec::new(),
        };
        manifest.write()?;
        Ok(manifest)
    }

    /// Records an output path relative to the run directory.
    pub fn add_output(&mut self, relative: impl Into<String>) {
        self.outputs.push(relative.into());
    }

    pub fn finish(mut self, error: Option<&CliError>) -> Result<(), CliError> {
        self.doc["finished_at"] = now().into();
        self.doc["outputs"] = json!(self.outputs);
        match error {
            None => self.doc["status"] = "ok".into(),
            Some(err) => {
                self.doc["status"] = "failed".into();
                self.doc["error"] = err.to_string().into();
            }
        }
        self.write()
    }

    fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.doc).expect("manifest is plain JSON");
        write_file(&self.path, |out| writeln!(out, "{text}"))
    }
}
