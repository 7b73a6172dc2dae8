//! Latency cost model, analytic expected latency, and run metrics.
//!
//! Latencies are "ms-equivalents" on a virtual clock.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationMatrix;
use crate::error::{CocaError, Result};

/// Share of the no-cache latency spent on lookups when every layer holds
/// every class at the reference class count.
pub const FULL_LOOKUP_SHARE: f64 = 0.5622;
/// Total block compute of the default profile.
pub const DEFAULT_TOTAL_COMPUTE: f64 = 100.0;
/// Fixed (per-layer) part of the lookup budget; the rest scales with entries.
pub const FIXED_LOOKUP_SHARE: f64 = 0.3;
pub const DEFAULT_REFERENCE_CLASSES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    /// Compute time of each model block, one per slot (`L + 1`).
    pub block_times: Vec<f64>,
    pub lookup_per_entry: f64,
    pub lookup_per_layer: f64,
}

impl CostProfile {
    pub fn layers(&self) -> usize {
        self.block_times.len() - 1
    }

    pub fn total_compute(&self) -> f64 {
        self.block_times.iter().sum()
    }

    /// Lookup time of an activated layer holding `entries` entries.
    #[inline]
    pub fn lookup_cost(&self, entries: usize) -> f64 {
        if entries == 0 {
            0.0
        } else {
            self.lookup_per_layer + self.lookup_per_entry * entries as f64
        }
    }

    /// `C_j(X)` for every slot; the final slot is always zero.
    pub fn lookup_costs(&self, x: &AllocationMatrix) -> Vec<f64> {
        let mut c: Vec<f64> = (0..x.layers()).map(|j| self.lookup_cost(x.entries_at(j))).collect();
        c.push(0.0);
        c
    }

    /// Compute time avoided when exiting at each slot: `Σ_{l > j} Λ_l`.
    pub fn saved_time(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.block_times.len()];
        let mut tail = 0.0;
        for j in (0..self.block_times.len()).rev() {
            out[j] = tail;
            tail += self.block_times[j];
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_times.len() < 2 {
            return Err(CocaError::validation("cost profile needs at least two blocks"));
        }
        let all = self.block_times.iter().chain([&self.lookup_per_entry, &self.lookup_per_layer]);
        if all.into_iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(CocaError::validation("costs must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Uniform block times summing to 100 and lookup coefficients such that a
/// full allocation at `reference_classes` costs 56.22% of the compute total,
/// split 30% per-layer and 70% per-entry.
pub fn calibrate_default_costs(layers: usize, reference_classes: usize) -> Result<CostProfile> {
    if layers == 0 || reference_classes == 0 {
        return Err(CocaError::validation("layers and reference classes must be positive"));
    }
    let slots = layers + 1;
    let block = DEFAULT_TOTAL_COMPUTE / slots as f64;
    let lookup_budget = FULL_LOOKUP_SHARE * DEFAULT_TOTAL_COMPUTE;
    let per_layer = lookup_budget / layers as f64;
    Ok(CostProfile {
        block_times: vec![block; slots],
        lookup_per_layer: FIXED_LOOKUP_SHARE * per_layer,
        lookup_per_entry: (1.0 - FIXED_LOOKUP_SHARE) * per_layer / reference_classes as f64,
    })
}

/// `Σ_j (1 − P_j)·(Λ_j + C_j(X))`, where `P_j` is the probability of having
/// hit before slot `j`.
pub fn expected_latency(x: &AllocationMatrix, hit_before: &[f64], cost: &CostProfile) -> Result<f64> {
    let slots = cost.block_times.len();
    if hit_before.len() != slots {
        return Err(CocaError::DimensionMismatch { expected: slots, actual: hit_before.len() });
    }
    if x.layers() + 1 != slots {
        return Err(CocaError::DimensionMismatch { expected: slots - 1, actual: x.layers() });
    }
    if hit_before[0] != 0.0 {
        return Err(CocaError::validation("hit-before probability of the first slot must be 0"));
    }
    if hit_before.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(CocaError::validation("hit-before probabilities must lie in [0, 1]"));
    }
    if hit_before.windows(2).any(|w| w[1] < w[0]) {
        return Err(CocaError::validation("hit-before probabilities must be non-decreasing"));
    }
    let lookups = cost.lookup_costs(x);
    Ok((0..slots).map(|j| (1.0 - hit_before[j]) * (cost.block_times[j] + lookups[j])).sum())
}

/// Hit-before probabilities from per-slot exit frequencies.
pub fn hit_before_from_exits(exit_freq: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    exit_freq
        .iter()
        .map(|f| {
            let p = acc;
            acc += f;
            p.min(1.0)
        })
        .collect()
}

/// `Σ x_{i,j}·m_{i,j}` with a uniform entry size.
pub fn cache_size(x: &AllocationMatrix, entry_bytes: u64) -> u64 {
    x.count() as u64 * entry_bytes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub frames: u64,
    pub average_latency_ms: f64,
    pub overall_accuracy: f64,
    /// Fraction of frames that exited early at a cache layer.
    pub hit_ratio: f64,
    /// Accuracy over cache hits; zero when there were none.
    pub hit_accuracy: f64,
    /// Fraction of frames exiting at each slot, final slot included.
    pub per_layer_hit_ratio: Vec<f64>,
    pub cache_bytes_used: u64,
}

impl RunMetrics {
    pub fn empty(slots: usize) -> Self {
        RunMetrics {
            frames: 0,
            average_latency_ms: 0.0,
            overall_accuracy: 0.0,
            hit_ratio: 0.0,
            hit_accuracy: 0.0,
            per_layer_hit_ratio: vec![0.0; slots],
            cache_bytes_used: 0,
        }
    }
}

/// Running totals from which [`RunMetrics`] are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTally {
    pub frames: u64,
    pub total_latency: f64,
    pub correct: u64,
    pub hits: u64,
    pub correct_hits: u64,
    pub exits: Vec<u64>,
    pub cache_bytes_used: u64,
}

impl MetricsTally {
    pub fn new(slots: usize) -> Self {
        MetricsTally {
            frames: 0,
            total_latency: 0.0,
            correct: 0,
            hits: 0,
            correct_hits: 0,
            exits: vec![0; slots],
            cache_bytes_used: 0,
        }
    }

    pub fn record(&mut self, latency: f64, exit_slot: usize, hit: bool, correct: bool) {
        self.frames += 1;
        self.total_latency += latency;
        self.exits[exit_slot] += 1;
        if correct {
            self.correct += 1;
        }
        if hit {
            self.hits += 1;
            if correct {
                self.correct_hits += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &MetricsTally) {
        self.frames += other.frames;
        self.total_latency += other.total_latency;
        self.correct += other.correct;
        self.hits += other.hits;
        self.correct_hits += other.correct_hits;
        for (a, b) in self.exits.iter_mut().zip(&other.exits) {
            *a += b;
        }
        self.cache_bytes_used = self.cache_bytes_used.max(other.cache_bytes_used);
    }

    pub fn metrics(&self) -> RunMetrics {
        if self.frames == 0 {
            let mut m = RunMetrics::empty(self.exits.len());
            m.cache_bytes_used = self.cache_bytes_used;
            return m;
        }
        let n = self.frames as f64;
        RunMetrics {
            frames: self.frames,
            average_latency_ms: self.total_latency / n,
            overall_accuracy: self.correct as f64 / n,
            hit_ratio: self.hits as f64 / n,
            hit_accuracy: if self.hits == 0 { 0.0 } else { self.correct_hits as f64 / self.hits as f64 },
            per_layer_hit_ratio: self.exits.iter().map(|e| *e as f64 / n).collect(),
            cache_bytes_used: self.cache_bytes_used,
        }
    }
}

/// Frame-weighted combination of per-client metrics.
pub fn aggregate(per_client: &[RunMetrics]) -> Result<RunMetrics> {
    let first = per_client.first().ok_or_else(|| CocaError::validation("cannot aggregate an empty metrics list"))?;
    let slots = first.per_layer_hit_ratio.len();
    if per_client.iter().any(|m| m.per_layer_hit_ratio.len() != slots) {
        return Err(CocaError::validation("metrics disagree on slot count"));
    }
    let frames: u64 = per_client.iter().map(|m| m.frames).sum();
    let bytes = per_client.iter().map(|m| m.cache_bytes_used).max().unwrap_or(0);
    if frames == 0 {
        let mut m = RunMetrics::empty(slots);
        m.cache_bytes_used = bytes;
        return Ok(m);
    }
    let total = frames as f64;
    let weighted = |f: &dyn Fn(&RunMetrics) -> f64| -> f64 {
        per_client.iter().map(|m| m.frames as f64 * f(m)).sum::<f64>() / total
    };
    let hits: f64 = per_client.iter().map(|m| m.frames as f64 * m.hit_ratio).sum();
    let correct_hits: f64 = per_client.iter().map(|m| m.frames as f64 * m.hit_ratio * m.hit_accuracy).sum();
    Ok(RunMetrics {
        frames,
        average_latency_ms: weighted(&|m| m.average_latency_ms),
        overall_accuracy: weighted(&|m| m.overall_accuracy),
        hit_ratio: hits / total,
        hit_accuracy: if hits > 0.0 { correct_hits / hits } else { 0.0 },
        per_layer_hit_ratio: (0..slots).map(|j| weighted(&|m| m.per_layer_hit_ratio[j])).collect(),
        cache_bytes_used: bytes,
    })
}

/// Append-only record sink shared by concurrent workers.
#[derive(Debug, Default)]
pub struct MetricsSink<T> {
    records: Mutex<Vec<T>>,
}

impl<T> MetricsSink<T> {
    pub fn new() -> Self {
        MetricsSink { records: Mutex::new(Vec::new()) }
    }

    pub fn push(&self, record: T) {
        self.records.lock().expect("metrics sink poisoned").push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("metrics sink poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_records(self) -> Vec<T> {
        self.records.into_inner().expect("metrics sink poisoned")
    }
}
