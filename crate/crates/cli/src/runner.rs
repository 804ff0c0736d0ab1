use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{ExperimentConfig, Kind, Overrides};
use crate::error::{CliError, CliResult};
use crate::experiments::{execute, Table};
use crate::record::{canonical_json, write_records, ResultRecord};

/// Default root of experiment directories.
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub experiment_id: String,
    pub dir: PathBuf,
    pub records: Vec<ResultRecord>,
}

/// Runs `f` on a pool of `workers` threads (all cores when `None`).
pub fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Io(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn write_table(dir: &Path, table: &Table) -> CliResult<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", table.name)))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads, validates and executes a configuration, then persists
/// `config.json`, `records.jsonl`, `report.json` and `tables/*.csv` under
/// `<out>/<kind>-<digest12>/`. Nothing is written when the run fails.
pub fn run(kind: Option<Kind>, config: &Path, overrides: &Overrides) -> CliResult<RunOutput> {
    let cfg = ExperimentConfig::load(config, kind, overrides)?;
    run_config(&cfg)
}

pub fn run_config(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let id = cfg.experiment_id();
    let digest = cfg.digest();
    let root = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let dir = root.join(&id);
    let staging = root.join(format!(".{id}.partial"));
    let clock = Instant::now();
    let outcome = with_pool(cfg.workers, || execute(cfg, &staging.join("artifacts")));
    let outcome = match outcome.and_then(|o| o) {
        Ok(o) => o,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    let wall = clock.elapsed().as_secs_f64();
    let records: Vec<ResultRecord> = outcome
        .metrics
        .into_iter()
        .map(|m| m.stamp(&id, &digest, wall))
        .collect();
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(dir.join("tables"))?;
    if staging.join("artifacts").exists() {
        fs::rename(staging.join("artifacts"), dir.join("artifacts"))?;
    }
    let _ = fs::remove_dir_all(&staging);
    fs::write(dir.join("config.json"), canonical_json(&cfg.document))?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&outcome.report)?,
    )?;
    for t in &outcome.tables {
        write_table(&dir.join("tables"), t)?;
    }
    write_records(&dir.join("records.jsonl"), &records)?;
    Ok(RunOutput {
        experiment_id: id,
        dir,
        records,
    })
}
