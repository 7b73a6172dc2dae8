//! Commands behind the `coca` binary: single runs, parameter sweeps and
//! policy comparisons. Every command is a pure function of its inputs and
//! seed to files on disk.

use std::fs;
use std::path::{Path, PathBuf};

use coca_core::engine::output::{metrics_row, write_outputs, METRICS_HEADER};
use coca_core::{run_scenario, CocaError, Policy, RunMetrics, Scenario};
use rayon::prelude::*;
use thiserror::Error;

/// Largest number of parameters one sweep may vary.
pub const MAX_SWEEP_PARAMS: usize = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CocaError),

    #[error("cannot read {}: {source}", path.display())]
    Config { path: PathBuf, source: CocaError },

    #[error("invalid sweep: {0}")]
    Sweep(String),

    #[error("policy {policy} saw a different label trace")]
    TraceMismatch { policy: Policy },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Loads the scenario file (or the defaults), applies `key=value`
/// overrides in order, then the seed.
pub fn load_scenario(config: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<Scenario> {
    let mut pairs: Vec<(String, String)> = match config {
        Some(path) => Scenario::load(path)
            .map_err(|source| match source {
                CocaError::Io(_) => CliError::Config { path: path.to_path_buf(), source },
                other => other.into(),
            })?
            .pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        None => Vec::new(),
    };
    for o in overrides {
        let (k, v) =
            o.split_once('=').ok_or_else(|| CocaError::Validation(format!("override `{o}` is not key=value")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    Ok(Scenario::from_pairs(pairs)?)
}

/// Runs one scenario and writes `metrics.csv`, `summary.json` and any
/// optional artifacts into `out`.
pub fn cmd_run(scenario: &Scenario, out: &Path) -> Result<Vec<PathBuf>> {
    let result = run_scenario(scenario)?;
    Ok(write_outputs(scenario, &result, out)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParam {
    pub key: String,
    pub values: Vec<String>,
}

impl SweepParam {
    /// Parses `key=v1,v2,...`. Values that themselves contain commas can be
    /// separated with `|` instead.
    pub fn parse(text: &str) -> Result<Self> {
        let (key, values) =
            text.split_once('=').ok_or_else(|| CliError::Sweep(format!("`{text}` is not key=v1,v2,...")))?;
        let sep = if values.contains('|') { '|' } else { ',' };
        let values: Vec<String> =
            values.split(sep).map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
        let key = key.trim().to_string();
        if values.is_empty() {
            return Err(CliError::Sweep(format!("{key} has no values")));
        }
        Ok(SweepParam { key, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub params: Vec<SweepParam>,
    /// Seeds per cell, counting up from the scenario seed.
    pub replicates: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(CliError::Sweep("no parameters".into()));
        }
        if self.params.len() > MAX_SWEEP_PARAMS {
            return Err(CliError::Sweep(format!(
                "{} parameters given, at most {MAX_SWEEP_PARAMS} allowed",
                self.params.len()
            )));
        }
        if self.replicates == 0 {
            return Err(CliError::Sweep("replicates must be positive".into()));
        }
        for (n, p) in self.params.iter().enumerate() {
            if p.values.is_empty() {
                return Err(CliError::Sweep(format!("{} has no values", p.key)));
            }
            if self.params[..n].iter().any(|q| q.key == p.key) {
                return Err(CliError::Sweep(format!("{} is swept twice", p.key)));
            }
        }
        Ok(())
    }

    /// Every cell of the cartesian product, first parameter slowest.
    pub fn cells(&self) -> Vec<Vec<&str>> {
        self.params.iter().fold(vec![Vec::new()], |cells, p| {
            cells
                .into_iter()
                .flat_map(|cell| {
                    p.values.iter().map(move |v| {
                        let mut c = cell.clone();
                        c.push(v.as_str());
                        c
                    })
                })
                .collect()
        })
    }
}

const AGGREGATE_HEADER: &[&str] = &[
    "frames",
    "average_latency_ms",
    "overall_accuracy",
    "hit_ratio",
    "hit_accuracy",
    "cache_bytes_used",
    "per_layer_hit_ratio",
];

fn aggregate_fields(m: &RunMetrics) -> Vec<String> {
    vec![
        m.frames.to_string(),
        m.average_latency_ms.to_string(),
        m.overall_accuracy.to_string(),
        m.hit_ratio.to_string(),
        m.hit_accuracy.to_string(),
        m.cache_bytes_used.to_string(),
        m.per_layer_hit_ratio.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
    ]
}

/// Runs every (cell, replicate) pair and writes `sweep.csv`: the swept
/// values and seed, then the run's aggregate metrics.
pub fn cmd_sweep(scenario: &Scenario, spec: &SweepSpec, out: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for cell in spec.cells() {
        let mut s = scenario.clone();
        for (p, v) in spec.params.iter().zip(&cell) {
            s.set(&p.key, v)?;
        }
        s.validate()?;
        for r in 0..spec.replicates {
            let mut run = s.clone();
            run.seed = scenario.seed.wrapping_add(r);
            run.workers = 1;
            jobs.push((cell.clone(), run));
        }
    }
    let results: Vec<RunMetrics> =
        jobs.par_iter().map(|(_, s)| run_scenario(s).map(|r| r.aggregate)).collect::<std::result::Result<_, _>>()?;

    fs::create_dir_all(out)?;
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let header = spec.params.iter().map(|p| p.key.as_str()).chain(["seed"]).chain(AGGREGATE_HEADER.iter().copied());
    w.write_record(header)?;
    for ((cell, s), m) in jobs.iter().zip(&results) {
        let row = cell.iter().map(|v| v.to_string()).chain([s.seed.to_string()]).chain(aggregate_fields(m));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(path)
}

/// Replays the scenario's workload under each policy and writes
/// `compare.csv` (one row per round, client and policy) and
/// `compare_summary.csv` (one row per policy).
pub fn cmd_compare(scenario: &Scenario, policies: &[Policy], out: &Path) -> Result<Vec<PathBuf>> {
    if policies.is_empty() {
        return Err(CocaError::Validation("no policies to compare".into()).into());
    }
    let runs = policies
        .par_iter()
        .map(|&p| {
            let mut s = scenario.clone();
            s.allocator.policies = vec![p];
            run_scenario(&s)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let reference: Vec<u64> = runs[0].records.iter().map(|r| r.label_checksum).collect();
    for (p, run) in policies.iter().zip(&runs).skip(1) {
        if !run.records.iter().map(|r| r.label_checksum).eq(reference.iter().copied()) {
            return Err(CliError::TraceMismatch { policy: *p });
        }
    }

    fs::create_dir_all(out)?;
    let detail = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&detail)?;
    w.write_record(METRICS_HEADER)?;
    for row in 0..reference.len() {
        for run in &runs {
            w.write_record(metrics_row(&run.records[row]))?;
        }
    }
    w.flush()?;

    let summary = out.join("compare_summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["policy"].into_iter().chain(AGGREGATE_HEADER.iter().copied()).chain(["edge_only_latency_ms"]))?;
    for (p, run) in policies.iter().zip(&runs) {
        let row = [p.to_string()]
            .into_iter()
            .chain(aggregate_fields(&run.aggregate))
            .chain([run.edge_only_latency_ms.to_string()]);
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(vec![detail, summary])
}

/// Parses a comma-separated policy list.
pub fn parse_policies(text: &str) -> Result<Vec<Policy>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Policy>().map_err(CliError::from))
        .collect()
}
