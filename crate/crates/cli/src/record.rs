use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// One measured quantity of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub digest: String,
    pub metric: String,
    /// Sweep coordinates of the measurement (e.g. `t`, `r`, `delta`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, f64>,
    /// `None` exactly when `degenerate` is set.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(default)]
    pub degenerate: bool,
    pub wall_time_s: f64,
    pub timestamp_ms: u64,
}

impl ResultRecord {
    /// The record with wall time and timestamp cleared.
    pub fn canonical(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            timestamp_ms: 0,
            ..self.clone()
        }
    }

    pub fn label(&self, key: &str) -> Option<f64> {
        self.labels.get(key).copied()
    }
}

/// Measurement before it is stamped with the experiment identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub labels: BTreeMap<String, f64>,
    pub value: f64,
    pub std_error: Option<f64>,
}

impl Metric {
    pub fn new(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            labels: BTreeMap::new(),
            value,
            std_error: None,
        }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 })
    }

    pub fn se(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }

    pub fn at(mut self, key: &str, v: f64) -> Self {
        self.labels.insert(key.into(), v);
        self
    }

    pub fn stamp(self, experiment_id: &str, digest: &str, wall_time_s: f64) -> ResultRecord {
        let finite = self.value.is_finite();
        ResultRecord {
            experiment_id: experiment_id.into(),
            digest: digest.into(),
            metric: self.name,
            labels: self.labels,
            value: finite.then_some(self.value),
            std_error: self.std_error.filter(|s| s.is_finite()),
            degenerate: !finite,
            wall_time_s,
            timestamp_ms: now_ms(),
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Sorted-key, whitespace-free serialization.
pub fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .iter()
                .map(|k| {
                    format!(
                        "{}:{}",
                        Value::String((*k).clone()),
                        canonical_json(&map[*k])
                    )
                })
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!(
            "[{}]",
            items
                .iter()
                .map(canonical_json)
                .collect::<Vec<_>>()
                .join(",")
        ),
        other => other.to_string(),
    }
}

/// Hex SHA-256 of the canonical serialization.
pub fn digest(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(canonical_json(v).as_bytes()))
}

pub fn write_records(path: &Path, records: &[ResultRecord]) -> CliResult<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_records(path: &Path) -> CliResult<Vec<ResultRecord>> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = vec![];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn digest_ignores_key_order() {
        let a: serde_json::Value =
            serde_json::from_str(r#"{"b": 1, "a": {"y": [1, 2], "x": 0.5}}"#).unwrap();
        let b: serde_json::Value =
            serde_json::from_str(r#"{"a": {"x": 0.5, "y": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(canonical_json(&a), r#"{"a":{"x":0.5,"y":[1,2]},"b":1}"#);
        assert_eq!(digest(&a), digest(&b));
        assert_ne!(digest(&a), digest(&json!({"b": 2})));
    }

    #[test]
    fn non_finite_values_are_flagged() {
        let r = Metric::new("x", f64::NAN).stamp("e", "d", 0.0);
        assert!(r.degenerate && r.value.is_none());
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains("\"value\":null"));
        let ok = Metric::new("x", 2.0)
            .se(0.1)
            .at("t", 0.5)
            .stamp("e", "d", 1.0);
        assert_eq!(ok.value, Some(2.0));
        assert_eq!(ok.label("t"), Some(0.5));
        assert_eq!(ok.canonical().timestamp_ms, 0);
    }
}
