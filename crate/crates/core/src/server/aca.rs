//! Adaptive cache allocation.
//!
//! Stage 1 ranks classes by `Φ_i · decay^⌊τ_i / F⌋` and keeps the shortest
//! prefix whose scores reach the coverage target (the hot-spot set). Stage 2
//! greedily adds whole layers of hot-spot entries by expected saving
//! `Υ_b · R_b`, discounting the hit ratio of deeper layers after each pick,
//! until the next layer would reach the memory budget.

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationMatrix;
use crate::error::{CocaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcaParams {
    pub score_decay: f64,
    pub coverage_target: f64,
    pub frames_per_round: u64,
}

impl Default for AcaParams {
    fn default() -> Self {
        AcaParams { score_decay: 0.20, coverage_target: 0.95, frames_per_round: 300 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AcaInput<'a> {
    pub global_freq: &'a [u64],
    pub tau: &'a [u64],
    /// Expected hit ratio per slot; only the first `L` entries are read.
    pub hit_ratio: &'a [f64],
    /// Saved compute per slot; only the first `L` entries are read.
    pub saved_time: &'a [f64],
    pub budget_bytes: u64,
    /// Size of one entry at each layer.
    pub entry_bytes: &'a [u64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcaResult {
    pub allocation: AllocationMatrix,
    /// Hot-spot classes in rank order.
    pub hot_classes: Vec<usize>,
    pub scores: Vec<f64>,
    /// Layers in the order they were selected.
    pub selected_layers: Vec<usize>,
    /// Hit ratio of each selected layer at the moment it was picked.
    pub picked_hit_ratio: Vec<f64>,
    /// Hit-ratio vector after all adjustments.
    pub residual_hit_ratio: Vec<f64>,
    /// Bytes of the selected layers.
    pub allocated_bytes: u64,
}

/// `s_i = Φ_i · decay^⌊τ_i / F⌋`.
pub fn class_scores(global_freq: &[u64], tau: &[u64], frames_per_round: u64, decay: f64) -> Vec<f64> {
    let f = frames_per_round.max(1);
    global_freq
        .iter()
        .zip(tau)
        .map(|(&phi, &t)| {
            let periods = i32::try_from(t / f).unwrap_or(i32::MAX);
            phi as f64 * decay.powi(periods)
        })
        .collect()
}

/// Classes sorted by descending score (lower index first on ties), cut after
/// the class whose cumulative score first reaches `coverage · Σ s`.
pub fn hot_spot_set(scores: &[f64], coverage: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let target = coverage * scores.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut hot = Vec::new();
    for i in order {
        hot.push(i);
        acc += scores[i];
        if acc >= target {
            break;
        }
    }
    hot
}

pub fn aca_allocate(input: &AcaInput<'_>, params: &AcaParams) -> Result<AcaResult> {
    let classes = input.global_freq.len();
    let layers = input.entry_bytes.len();
    if input.tau.len() != classes {
        return Err(CocaError::DimensionMismatch { expected: classes, actual: input.tau.len() });
    }
    if input.hit_ratio.len() < layers || input.saved_time.len() < layers {
        return Err(CocaError::DimensionMismatch {
            expected: layers,
            actual: input.hit_ratio.len().min(input.saved_time.len()),
        });
    }
    if !(0.0..=1.0).contains(&params.coverage_target) {
        return Err(CocaError::validation("coverage target must lie in [0, 1]"));
    }

    let scores = class_scores(input.global_freq, input.tau, params.frames_per_round, params.score_decay);
    let hot = if classes == 0 { Vec::new() } else { hot_spot_set(&scores, params.coverage_target) };

    let mut residual: Vec<f64> = input.hit_ratio.to_vec();
    let mut eligible = vec![true; layers];
    let mut selected = Vec::new();
    let mut picked = Vec::new();
    let mut counted: u64 = 0;
    let mut allocated: u64 = 0;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for b in (0..layers).filter(|&b| eligible[b]) {
            let zeta = input.saved_time[b] * residual[b];
            if best.is_none_or(|(_, z)| zeta > z) {
                best = Some((b, zeta));
            }
        }
        let Some((b, zeta)) = best else { break };
        if zeta <= 0.0 {
            break;
        }
        let layer_bytes = input.entry_bytes[b] * hot.len() as u64;
        counted += layer_bytes;
        if counted >= input.budget_bytes {
            break;
        }
        allocated += layer_bytes;
        eligible[b] = false;
        selected.push(b);
        let p = residual[b];
        picked.push(p);
        for r in residual[b..layers].iter_mut() {
            *r = (*r - p).max(0.0);
        }
    }

    let allocation = AllocationMatrix::rectangular(classes, layers, hot.iter().copied(), selected.iter().copied());
    Ok(AcaResult {
        allocation,
        hot_classes: hot,
        scores,
        selected_layers: selected,
        picked_hit_ratio: picked,
        residual_hit_ratio: residual,
        allocated_bytes: allocated,
    })
}
