//! Server state: the global two-dimensional cache table, global cache
//! updates, calibration, and the allocators.

pub mod aca;
pub mod baseline;
pub mod snapshot;

use crate::allocation::{entry_bytes, AllocationMatrix};
use crate::cachemath::{self, SemanticVector};
use crate::client::{LocalCache, UploadPayload};
use crate::error::{CocaError, Result};
use crate::workload::FrameFeatures;

pub use aca::{aca_allocate, class_scores, hot_spot_set, AcaInput, AcaParams, AcaResult};
pub use baseline::{baseline_allocate, BaselineState, Policy};

/// `I × L` grid of optional entries plus the global class frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCacheTable {
    classes: usize,
    layers: usize,
    dim: usize,
    entries: Vec<Option<SemanticVector>>,
    /// Global class frequency `Φ`.
    pub global_freq: Vec<u64>,
}

impl GlobalCacheTable {
    pub fn new(classes: usize, layers: usize, dim: usize) -> Self {
        GlobalCacheTable { classes, layers, dim, entries: vec![None; classes * layers], global_freq: vec![0; classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Size `m` of a single entry in bytes.
    pub fn entry_bytes(&self) -> u64 {
        entry_bytes(self.dim)
    }

    pub fn entry(&self, class: usize, layer: usize) -> Option<&SemanticVector> {
        self.entries[class * self.layers + layer].as_ref()
    }

    pub fn set_entry(&mut self, class: usize, layer: usize, v: Option<SemanticVector>) -> Result<()> {
        if let Some(v) = &v {
            if v.dim() != self.dim {
                return Err(CocaError::DimensionMismatch { expected: self.dim, actual: v.dim() });
            }
        }
        self.entries[class * self.layers + layer] = v;
        Ok(())
    }

    pub fn present_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn iter_present(&self) -> impl Iterator<Item = (usize, usize, &SemanticVector)> {
        let layers = self.layers;
        self.entries.iter().enumerate().filter_map(move |(idx, e)| e.as_ref().map(|v| (idx / layers, idx % layers, v)))
    }

    /// Local cache holding the present entries selected by `x`.
    pub fn materialize(&self, x: &AllocationMatrix) -> LocalCache {
        LocalCache::from_entries(
            self.layers,
            x.iter_set().filter_map(|(i, j)| self.entry(i, j).map(|v| (i, j, v.clone()))),
        )
        .expect("allocation shape matches table")
    }

    /// `Φ ← Φ + φ`.
    pub fn add_frequencies(&mut self, phi: &[u64]) {
        for (g, l) in self.global_freq.iter_mut().zip(phi) {
            *g += l;
        }
    }
}

/// Entries changed by one upload.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GcuReport {
    pub merged: usize,
    pub initialized: usize,
    pub skipped: usize,
}

/// Frequency-weighted merge of a client's update table into the global table,
/// followed by the frequency update.
///
/// Weights use `Φ` from before this payload; every merged entry is
/// renormalized.
pub fn gcu_apply(table: &mut GlobalCacheTable, payload: &UploadPayload, gamma: f64) -> Result<GcuReport> {
    if payload.phi.len() != table.classes {
        return Err(CocaError::DimensionMismatch { expected: table.classes, actual: payload.phi.len() });
    }
    let mut report = GcuReport::default();
    for (class, layer, update) in &payload.touched {
        let (class, layer) = (*class, *layer);
        if class >= table.classes || layer >= table.layers {
            return Err(CocaError::validation(format!("update entry ({class}, {layer}) out of range")));
        }
        if update.dim() != table.dim {
            return Err(CocaError::DimensionMismatch { expected: table.dim, actual: update.dim() });
        }
        let global = table.global_freq[class] as f64;
        let local = payload.phi[class] as f64;
        if global + local == 0.0 {
            report.skipped += 1;
            continue;
        }
        let slot = &mut table.entries[class * table.layers + layer];
        match slot {
            None => {
                *slot = Some(update.clone());
                report.initialized += 1;
            }
            Some(current) => {
                let keep = gamma * global / (global + local);
                let take = local / (global + local);
                let raw: Vec<f64> =
                    current.as_slice().iter().zip(update.as_slice()).map(|(e, u)| keep * e + take * u).collect();
                match SemanticVector::normalized(raw) {
                    Some(v) => {
                        *current = v;
                        report.merged += 1;
                    }
                    None => report.skipped += 1,
                }
            }
        }
    }
    table.add_frequencies(&payload.phi);
    Ok(report)
}

/// Initial table from labeled calibration frames: each entry is the
/// normalized mean of its class's vectors at that layer, and `Φ` starts at
/// the calibration counts. Degenerate means leave the entry absent.
pub fn init_global_cache<F, I>(classes: usize, layers: usize, dim: usize, calibration: I) -> Result<GlobalCacheTable>
where
    F: FrameFeatures,
    I: IntoIterator<Item = F>,
{
    let mut sums = vec![vec![0.0; dim]; classes * layers];
    let mut table = GlobalCacheTable::new(classes, layers, dim);
    for mut frame in calibration {
        let label = frame.true_label();
        if label >= classes {
            return Err(CocaError::validation(format!("calibration label {label} out of range")));
        }
        table.global_freq[label] += 1;
        for j in 0..layers {
            let v = frame.layer(j);
            if v.dim() != dim {
                return Err(CocaError::DimensionMismatch { expected: dim, actual: v.dim() });
            }
            for (s, x) in sums[label * layers + j].iter_mut().zip(v.as_slice()) {
                *s += x;
            }
        }
    }
    for (idx, sum) in sums.into_iter().enumerate() {
        let count = table.global_freq[idx / layers];
        if count == 0 {
            continue;
        }
        let mean: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
        table.entries[idx] = SemanticVector::normalized(mean);
    }
    Ok(table)
}

/// Hit ratio of each cache layer in isolation, measured on probe frames with
/// every present entry of that layer allocated. The final slot is 1.
pub fn layer_hit_profile<F, I>(table: &GlobalCacheTable, probes: I, theta: f64) -> Vec<f64>
where
    F: FrameFeatures,
    I: IntoIterator<Item = F>,
{
    let mut hits = vec![0u64; table.layers];
    let mut n = 0u64;
    let per_layer: Vec<Vec<(usize, &SemanticVector)>> = (0..table.layers)
        .map(|j| (0..table.classes).filter_map(|i| table.entry(i, j).map(|v| (i, v))).collect())
        .collect();
    for mut frame in probes {
        n += 1;
        for (j, entries) in per_layer.iter().enumerate() {
            if entries.len() < 2 {
                continue;
            }
            let v = frame.layer(j);
            let ranking = cachemath::rank_candidates(entries.iter().map(|(i, e)| (*i, v.dot(e))));
            if cachemath::hit_test(ranking, j, theta).is_hit() {
                hits[j] += 1;
            }
        }
    }
    let mut profile: Vec<f64> = hits.into_iter().map(|h| if n == 0 { 0.0 } else { h as f64 / n as f64 }).collect();
    profile.push(1.0);
    profile
}
