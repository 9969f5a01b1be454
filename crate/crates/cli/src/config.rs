//! Flat key-path configuration.
//!
//! A config file is TOML; nested tables are flattened to dotted key paths
//! (`fed.rounds`, `prices.instance.portal`). `--set key=value` overrides are
//! parsed as TOML values, falling back to a bare string. A run manifest
//! (`manifest.json`) is accepted in place of a TOML file.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use toml::Value;

use crate::CliError;

/// Dotted key path → value, with a record of which keys were read.
#[derive(Debug, Default)]
pub struct FlatConfig {
    values: BTreeMap<String, Value>,
    read: RefCell<BTreeSet<String>>,
}

fn config_error(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_owned(),
        message: message.into(),
    }
}

impl FlatConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_error("<file>", e.message().to_owned()))?;
        let mut values = BTreeMap::new();
        flatten("", table, &mut values);
        Ok(Self {
            values,
            read: RefCell::default(),
        })
    }

    /// Reads a TOML config or the `config` object of a run manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_manifest_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn from_manifest_str(text: &str) -> Result<Self, CliError> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| config_error("<manifest>", e.to_string()))?;
        let config = doc
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| config_error("config", "manifest has no config object"))?;
        let mut values = BTreeMap::new();
        for (key, value) in config {
            values.insert(key.clone(), json_to_toml(key, value)?);
        }
        Ok(Self {
            values,
            read: RefCell::default(),
        })
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| config_error(assignment, "override must look like key=value"))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(config_error(key, "malformed key path"));
        }
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_owned()));
        // A scalar override replaces any table previously flattened under it.
        let prefix = format!("{key}.");
        self.values.retain(|k, _| !k.starts_with(&prefix));
        self.values.insert(key.to_owned(), value);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn values(&self) -> &BTreeMap<String, Value> {
        &self.values
    }

    fn raw(&self, key: &str) -> Option<&Value> {
        self.read.borrow_mut().insert(key.to_owned());
        self.values.get(key)
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(config_error(key, format!("expected a string, got {other}"))),
        }
    }

    pub fn boolean(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(config_error(key, format!("expected true or false, got {other}"))),
        }
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.raw(key).map(|v| as_number(key, v)).transpose()
    }

    pub fn count(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.raw(key).map(|v| as_count(key, v)).transpose()
    }

    pub fn seed(&self, key: &str) -> Result<Option<u64>, CliError> {
        Ok(self.count(key)?.map(|n| n as u64))
    }

    pub fn counts(&self, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        self.list(key, as_count)
    }

    pub fn numbers(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.list(key, as_number)
    }

    fn list<T>(&self, key: &str, item: fn(&str, &Value) -> Result<T, CliError>) -> Result<Option<Vec<T>>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items.iter().map(|v| item(key, v)).collect::<Result<_, _>>().map(Some),
            Some(other) => Err(config_error(key, format!("expected a list, got {other}"))),
        }
    }

    /// Fails on the first key that nothing has read.
    pub fn reject_unknown(&self) -> Result<(), CliError> {
        let read = self.read.borrow();
        match self.values.keys().find(|k| !read.contains(*k)) {
            Some(key) => Err(config_error(key, "unknown configuration key")),
            None => Ok(()),
        }
    }

    /// Snapshot as a JSON object of key path → value.
    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .values
            .iter()
            .map(|(k, v)| (k.clone(), toml_to_json(v)))
            .collect();
        serde_json::Value::Object(map)
    }
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, Value>) {
    for (key, value) in table {
        let path = if prefix.is_empty() {
            key
        } else {
            format!("{prefix}.{key}")
        };
        match value {
            Value::Table(inner) => flatten(&path, inner, out),
            other => {
                out.insert(path, other);
            }
        }
    }
}

fn as_number(key: &str, v: &Value) -> Result<f64, CliError> {
    let x = match v {
        Value::Integer(i) => *i as f64,
        Value::Float(f) => *f,
        other => return Err(config_error(key, format!("expected a number, got {other}"))),
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(config_error(key, format!("expected a finite number, got {x}")))
    }
}

fn as_count(key: &str, v: &Value) -> Result<usize, CliError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        other => Err(config_error(key, format!("expected a non-negative integer, got {other}"))),
    }
}

fn toml_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::String(s) => serde_json::Value::String(s.clone()),
        Value::Integer(i) => (*i).into(),
        Value::Float(f) => serde_json::Number::from_f64(*f)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null),
        Value::Boolean(b) => (*b).into(),
        Value::Array(items) => items.iter().map(toml_to_json).collect(),
        Value::Datetime(d) => serde_json::Value::String(d.to_string()),
        Value::Table(t) => t.iter().map(|(k, v)| (k.clone(), toml_to_json(v))).collect(),
    }
}

fn json_to_toml(key: &str, v: &serde_json::Value) -> Result<Value, CliError> {
    Ok(match v {
        serde_json::Value::String(s) => Value::String(s.clone()),
        serde_json::Value::Bool(b) => Value::Boolean(*b),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => Value::Integer(i),
            None => Value::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        serde_json::Value::Array(items) => Value::Array(
            items
                .iter()
                .map(|v| json_to_toml(key, v))
                .collect::<Result<_, _>>()?,
        ),
        other => return Err(config_error(key, format!("unsupported manifest value {other}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_tables_flatten_to_key_paths() {
        let cfg = FlatConfig::from_toml_str("seed = 3\n[fed]\nrounds = 5\n[prices.instance]\nportal = 0.5\n").unwrap();
        let keys: Vec<&str> = cfg.values().keys().map(String::as_str).collect();
        assert_eq!(keys, ["fed.rounds", "prices.instance.portal", "seed"]);
        assert_eq!(cfg.count("fed.rounds").unwrap(), Some(5));
        assert_eq!(cfg.number("prices.instance.portal").unwrap(), Some(0.5));
    }

    #[test]
    fn overrides_parse_as_toml_with_string_fallback() {
        let mut cfg = FlatConfig::default();
        cfg.set("fed.rounds=7").unwrap();
        cfg.set("model.layers=[200, 10]").unwrap();
        cfg.set("partition.kind=single_label").unwrap();
        assert_eq!(cfg.count("fed.rounds").unwrap(), Some(7));
        assert_eq!(cfg.counts("model.layers").unwrap(), Some(vec![200, 10]));
        assert_eq!(cfg.string("partition.kind").unwrap().as_deref(), Some("single_label"));
        assert!(cfg.set("novalue").is_err());
        assert!(cfg.set("a..b=1").is_err());
    }

    #[test]
    fn type_errors_name_the_key() {
        let cfg = FlatConfig::from_toml_str("[fed]\nrounds = -1\n").unwrap();
        let err = cfg.count("fed.rounds").unwrap_err().to_string();
        assert!(err.contains("fed.rounds"), "{err}");
    }

    #[test]
    fn unread_keys_are_rejected() {
        let cfg = FlatConfig::from_toml_str("seed = 1\n[fed]\nrouns = 5\n").unwrap();
        cfg.seed("seed").unwrap();
        let err = cfg.reject_unknown().unwrap_err().to_string();
        assert!(err.contains("fed.rouns"), "{err}");
    }

    #[test]
    fn manifest_round_trip() {
        let mut cfg = FlatConfig::from_toml_str("seed = 2\n[fed]\nclient_fraction = 0.1\nrounds = 3\n").unwrap();
        cfg.set("model.layers=[10]").unwrap();
        let doc = serde_json::json!({ "config": cfg.to_json() });
        let back = FlatConfig::from_manifest_str(&doc.to_string()).unwrap();
        assert_eq!(back.values(), cfg.values());
    }
}
