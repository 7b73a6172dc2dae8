//! Run artifacts: `metrics.csv`, `summary.json`, and the optional event
//! log, label trace and global-cache snapshot.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ClientRoundRecord, FrameEvent, ProtocolCounts, Scenario, ScenarioResult};
use crate::client::Collected;
use crate::cost::RunMetrics;
use crate::error::Result;
use crate::server::snapshot::write_snapshot;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: &[&str] = &[
    "round",
    "client_id",
    "policy",
    "frames",
    "average_latency_ms",
    "overall_accuracy",
    "hit_ratio",
    "hit_accuracy",
    "cache_bytes_used",
    "cache_entries",
    "active_layers",
    "collected",
    "label_checksum",
    "per_layer_hit_ratio",
];

pub const EVENTS_HEADER: &str = "frame_index,client_id,true_label,predicted,exit_layer,latency_ms,hit,collected";

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

/// Fields of one metrics row, in [`METRICS_HEADER`] order.
pub fn metrics_row(r: &ClientRoundRecord) -> Vec<String> {
    let m = &r.metrics;
    vec![
        r.round.to_string(),
        r.client_id.to_string(),
        r.policy.to_string(),
        m.frames.to_string(),
        m.average_latency_ms.to_string(),
        m.overall_accuracy.to_string(),
        m.hit_ratio.to_string(),
        m.hit_accuracy.to_string(),
        m.cache_bytes_used.to_string(),
        r.cache_entries.to_string(),
        join(&r.active_layers),
        r.collected.to_string(),
        format!("{:016x}", r.label_checksum),
        join(&m.per_layer_hit_ratio),
    ]
}

pub fn write_metrics_csv<W: Write>(records: &[ClientRoundRecord], mut w: W) -> Result<()> {
    writeln!(w, "{}", METRICS_HEADER.join(","))?;
    for r in records {
        writeln!(w, "{}", metrics_row(r).join(","))?;
    }
    Ok(())
}

pub fn write_events_csv<W: Write>(events: &[FrameEvent], mut w: W) -> Result<()> {
    writeln!(w, "{EVENTS_HEADER}")?;
    for e in events {
        let collected = match e.collected {
            Collected::None => "none",
            Collected::HitSample => "hit_sample",
            Collected::MissSample => "miss_sample",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            e.frame_index, e.client_id, e.true_label, e.predicted, e.exit_layer, e.latency_ms, e.hit, collected
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub aggregate: RunMetrics,
    pub per_client: Vec<RunMetrics>,
    pub protocol: ProtocolCounts,
    pub edge_only_latency_ms: f64,
    pub global_cache_entries: usize,
}

pub fn summary(scenario: &Scenario, result: &ScenarioResult) -> Summary {
    Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seed: scenario.seed,
        config: scenario.echo(),
        aggregate: result.aggregate.clone(),
        per_client: result.per_client.clone(),
        protocol: result.protocol,
        edge_only_latency_ms: result.edge_only_latency_ms,
        global_cache_entries: result.table.present_count(),
    }
}

/// Writes every artifact of a run into `dir` and returns the paths written.
pub fn write_outputs(scenario: &Scenario, result: &ScenarioResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut create = |name: &str| -> Result<BufWriter<File>> {
        let path = dir.join(name);
        let f = File::create(&path)?;
        written.push(path);
        Ok(BufWriter::new(f))
    };

    let mut w = create("metrics.csv")?;
    write_metrics_csv(&result.records, &mut w)?;
    w.flush()?;

    let mut w = create("summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary(scenario, result))?;
    writeln!(w)?;
    w.flush()?;

    if scenario.output.events {
        let mut w = create("events.csv")?;
        write_events_csv(&result.events, &mut w)?;
        w.flush()?;
    }
    if let Some(trace) = &result.trace {
        let mut w = create("trace.bin")?;
        trace.write_binary(&mut w)?;
        w.flush()?;
    }
    if scenario.output.snapshot {
        let mut w = create("global_cache.bin")?;
        write_snapshot(&result.table, &mut w)?;
        w.flush()?;
    }
    Ok(written)
}
