//! Semantic-cache lookup math: cosine similarity, cross-layer accumulation,
//! discriminative scoring and the hit decision.
//!
//! Everything here is a pure function over value types. Class and layer
//! indices are zero-based throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{CocaError, Result};

/// Tolerance on `‖v‖₂ − 1` for vectors held by any cache or update table.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Below this norm a vector has no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-6;

/// Unit-L2-norm feature vector of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVector(Vec<f64>);

impl SemanticVector {
    /// Normalizes `components` to unit length. Returns `None` when the input
    /// norm is below [`DEGENERATE_NORM`].
    pub fn normalized(mut components: Vec<f64>) -> Option<Self> {
        let norm = l2_norm(&components);
        if !norm.is_finite() || norm < DEGENERATE_NORM {
            return None;
        }
        components.iter_mut().for_each(|c| *c /= norm);
        Some(SemanticVector(components))
    }

    /// Wraps components that are already unit-norm.
    pub fn from_unit(components: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&components);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(CocaError::validation(format!("vector norm {norm} is not unit within {UNIT_NORM_TOLERANCE}")));
        }
        Ok(SemanticVector(components))
    }

    /// Unit vector along axis `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        SemanticVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// Dot product without a dimension check; used on the lookup hot path
    /// where dimensions are fixed per simulation.
    #[inline]
    pub fn dot(&self, other: &SemanticVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn cosine_similarity(v: &SemanticVector, e: &SemanticVector) -> Result<f64> {
    if v.dim() != e.dim() {
        return Err(CocaError::DimensionMismatch { expected: v.dim(), actual: e.dim() });
    }
    Ok(v.dot(e))
}

/// One step of the cross-layer recurrence `A = C + α·A_prev`.
#[inline]
pub fn accumulate(similarity: f64, prev: f64, alpha: f64) -> f64 {
    similarity + alpha * prev
}

/// Per-class cumulative similarity for the classes a client holds.
///
/// Slots exist only for allocated classes. A class that is absent from an
/// activated layer keeps its value untouched at that layer.
#[derive(Debug, Clone, Default)]
pub struct AccumulatorState {
    classes: Vec<usize>,
    values: Vec<f64>,
    last_active_layer: Option<usize>,
}

impl AccumulatorState {
    pub fn new(allocated_classes: impl IntoIterator<Item = usize>) -> Self {
        let mut classes: Vec<usize> = allocated_classes.into_iter().collect();
        classes.sort_unstable();
        classes.dedup();
        let values = vec![0.0; classes.len()];
        AccumulatorState { classes, values, last_active_layer: None }
    }

    /// Zeroes every slot; called at the start of each frame.
    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.last_active_layer = None;
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn last_active_layer(&self) -> Option<usize> {
        self.last_active_layer
    }

    pub fn value(&self, class: usize) -> Option<f64> {
        self.slot(class).map(|s| self.values[s])
    }

    pub fn slot(&self, class: usize) -> Option<usize> {
        self.classes.binary_search(&class).ok()
    }

    /// Folds the similarity of slot `slot` at an activated layer.
    #[inline]
    pub fn fold_slot(&mut self, slot: usize, similarity: f64, alpha: f64) {
        self.values[slot] = accumulate(similarity, self.values[slot], alpha);
    }

    pub fn mark_layer(&mut self, layer: usize) {
        self.last_active_layer = Some(layer);
    }
}

/// Leader of a set of accumulated values and the resulting score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranking {
    pub leader: usize,
    pub score: Option<f64>,
}

/// Discriminative score `(A_a − A_b) / A_b` over `(class, value)` candidates.
///
/// The leader is the argmax with ties going to the lowest class index.
/// The score is `None` with fewer than two candidates or a non-positive
/// runner-up. Returns `None` overall when there are no candidates.
pub fn rank_candidates(candidates: impl IntoIterator<Item = (usize, f64)>) -> Option<Ranking> {
    let mut best: Option<(usize, f64)> = None;
    let mut second: Option<f64> = None;
    for (class, value) in candidates {
        match best {
            None => best = Some((class, value)),
            Some((bc, bv)) => {
                if value > bv || (value == bv && class < bc) {
                    second = Some(second.map_or(bv, |s| s.max(bv)));
                    best = Some((class, value));
                } else {
                    second = Some(second.map_or(value, |s| s.max(value)));
                }
            }
        }
    }
    let (leader, top) = best?;
    let score = match second {
        Some(runner_up) if runner_up > 0.0 => Some((top - runner_up) / runner_up),
        _ => None,
    };
    Some(Ranking { leader, score })
}

/// Discriminative score over every slot of `state`.
pub fn discriminative_score(state: &AccumulatorState) -> Option<f64> {
    rank_candidates(state.classes.iter().copied().zip(state.values.iter().copied())).and_then(|r| r.score)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HitOutcome {
    Hit { class: usize, layer: usize, score: f64 },
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitDecision {
    pub outcome: HitOutcome,
    pub discriminative_score: Option<f64>,
}

impl HitDecision {
    pub fn is_hit(&self) -> bool {
        matches!(self.outcome, HitOutcome::Hit { .. })
    }
}

/// Hit iff the score is defined and strictly above `theta`.
pub fn hit_test(ranking: Option<Ranking>, layer: usize, theta: f64) -> HitDecision {
    let score = ranking.and_then(|r| r.score);
    let outcome = match (ranking, score) {
        (Some(r), Some(d)) if d > theta => HitOutcome::Hit { class: r.leader, layer, score: d },
        _ => HitOutcome::Miss,
    };
    HitDecision { outcome, discriminative_score: score }
}
