//! Client-side cache-accelerated inference and status collection.
//!
//! A client walks the cache layers of its allocation in order, accruing block
//! compute and lookup time on the virtual clock, and exits at the first layer
//! whose discriminative score clears the hit threshold. Between rounds it
//! tracks class recency/frequency, a per-slot exit-frequency estimate and a
//! cache-update table of decayed feature sums.

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationMatrix;
use crate::cachemath::{self, AccumulatorState, HitOutcome, SemanticVector};
use crate::cost::CostProfile;
use crate::error::{CocaError, Result};
use crate::workload::{self, FrameFeatures, GroundTruth};

/// Entries a client holds, grouped by layer.
#[derive(Debug, Clone, Default)]
pub struct LocalCache {
    layers: Vec<Vec<CachedEntry>>,
    classes: Vec<usize>,
}

#[derive(Debug, Clone)]
struct CachedEntry {
    class: usize,
    slot: usize,
    vector: SemanticVector,
}

impl LocalCache {
    pub fn empty(layers: usize) -> Self {
        LocalCache { layers: vec![Vec::new(); layers], classes: Vec::new() }
    }

    /// Builds a cache from `(class, layer, vector)` triples.
    pub fn from_entries(
        layers: usize,
        entries: impl IntoIterator<Item = (usize, usize, SemanticVector)>,
    ) -> Result<Self> {
        let mut by_layer: Vec<Vec<(usize, SemanticVector)>> = vec![Vec::new(); layers];
        for (class, layer, vector) in entries {
            if layer >= layers {
                return Err(CocaError::validation(format!("layer {layer} out of range")));
            }
            by_layer[layer].push((class, vector));
        }
        let mut classes: Vec<usize> = by_layer.iter().flatten().map(|(c, _)| *c).collect();
        classes.sort_unstable();
        classes.dedup();
        let layers = by_layer
            .into_iter()
            .map(|mut entries| {
                entries.sort_by_key(|(c, _)| *c);
                entries.dedup_by_key(|(c, _)| *c);
                entries
                    .into_iter()
                    .map(|(class, vector)| CachedEntry {
                        class,
                        slot: classes.binary_search(&class).expect("class indexed"),
                        vector,
                    })
                    .collect()
            })
            .collect();
        Ok(LocalCache { layers, classes })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn entries_at(&self, layer: usize) -> usize {
        self.layers[layer].len()
    }

    pub fn is_active(&self, layer: usize) -> bool {
        !self.layers[layer].is_empty()
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn entry_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn allocation(&self, classes: usize) -> AllocationMatrix {
        let mut x = AllocationMatrix::empty(classes, self.layers.len());
        for (j, entries) in self.layers.iter().enumerate() {
            for e in entries {
                x.set(e.class, j, true);
            }
        }
        x
    }

    pub fn accumulator(&self) -> AccumulatorState {
        AccumulatorState::new(self.classes.iter().copied())
    }
}

/// Hit threshold Θ and the two sample-collection thresholds Γ and Δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { theta: 0.012, gamma: 0.1, delta: 0.25 }
    }
}

/// Which label drives the recency/frequency bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelOracle {
    Predicted,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientParams {
    /// Cross-layer decay α.
    pub alpha: f64,
    /// Update-table decay β.
    pub beta: f64,
    /// EMA weight of the exit-frequency estimate.
    pub ema_weight: f64,
    pub temperature: f64,
    pub label_oracle: LabelOracle,
}

impl Default for ClientParams {
    fn default() -> Self {
        ClientParams {
            alpha: 0.5,
            beta: 0.95,
            ema_weight: 0.05,
            temperature: 0.05,
            label_oracle: LabelOracle::Predicted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Collected {
    None,
    HitSample,
    MissSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    pub predicted: usize,
    /// Exit slot; `L` means the full model ran.
    pub exit_layer: usize,
    pub simulated_latency: f64,
    pub hit: bool,
    pub score: Option<f64>,
    pub collected: Collected,
}

/// Upload sent to the server at the end of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadPayload {
    pub client_id: usize,
    /// Normalized update entries as `(class, layer, vector)`, class-major.
    pub touched: Vec<(usize, usize, SemanticVector)>,
    pub phi: Vec<u64>,
    pub hit_ratio: Vec<f64>,
    pub saved_time: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    classes: usize,
    layers: usize,
    /// Frames since each class was last observed.
    pub tau: Vec<u64>,
    /// Observations of each class this round.
    pub phi: Vec<u64>,
    update: Vec<Option<Vec<f64>>>,
    /// Per-slot exit frequency estimate, `L + 1` entries.
    pub hit_ratio: Vec<f64>,
    /// Compute avoided by exiting at each slot.
    pub saved_time: Vec<f64>,
    pub allocation: AllocationMatrix,
    pub round_counter: u64,
}

impl ClientState {
    pub fn new(client_id: usize, classes: usize, cost: &CostProfile) -> Self {
        let layers = cost.layers();
        let slots = layers + 1;
        ClientState {
            client_id,
            classes,
            layers,
            tau: vec![0; classes],
            phi: vec![0; classes],
            update: vec![None; classes * layers],
            hit_ratio: vec![1.0 / slots as f64; slots],
            saved_time: cost.saved_time(),
            allocation: AllocationMatrix::empty(classes, layers),
            round_counter: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Raw (unnormalized) update entry.
    pub fn update_entry(&self, class: usize, layer: usize) -> Option<&[f64]> {
        self.update[class * self.layers + layer].as_deref()
    }

    pub fn touched_count(&self) -> usize {
        self.update.iter().filter(|u| u.is_some()).count()
    }

    /// Resets `τ` of the observed class and ages every other class.
    pub fn observe(&mut self, class: usize) {
        for (i, t) in self.tau.iter_mut().enumerate() {
            if i == class {
                *t = 0;
            } else {
                *t += 1;
            }
        }
        self.phi[class] += 1;
    }
}

/// Runs one frame through the cache and, on a miss, the full model.
///
/// Updates `τ` and `φ` but leaves collection and hit statistics to
/// [`collect_update`] and [`update_hit_stats`].
#[allow(clippy::too_many_arguments)]
pub fn infer_frame<F: FrameFeatures + ?Sized>(
    sample: &mut F,
    state: &mut ClientState,
    cache: &LocalCache,
    accumulator: &mut AccumulatorState,
    gt: &GroundTruth,
    cost: &CostProfile,
    thresholds: &Thresholds,
    params: &ClientParams,
) -> InferenceOutcome {
    let layers = cost.layers();
    debug_assert_eq!(cache.layer_count(), layers);
    accumulator.reset();
    let mut latency = 0.0;
    let mut result = None;
    // With an infinite threshold no lookup can hit, so none is performed.
    let lookups = thresholds.theta.is_finite();
    for (j, entries) in cache.layers.iter().enumerate() {
        latency += cost.block_times[j];
        if entries.is_empty() || !lookups {
            continue;
        }
        latency += cost.lookup_cost(entries.len());
        let v = sample.layer(j);
        for e in entries {
            accumulator.fold_slot(e.slot, v.dot(&e.vector), params.alpha);
        }
        accumulator.mark_layer(j);
        let values = accumulator.values();
        let ranking = cachemath::rank_candidates(entries.iter().map(|e| (e.class, values[e.slot])));
        let decision = cachemath::hit_test(ranking, j, thresholds.theta);
        if let HitOutcome::Hit { class, score, .. } = decision.outcome {
            result = Some((class, j, score));
            break;
        }
    }

    let outcome = match result {
        Some((class, layer, score)) => InferenceOutcome {
            predicted: class,
            exit_layer: layer,
            simulated_latency: latency,
            hit: true,
            score: Some(score),
            collected: if score > thresholds.gamma { Collected::HitSample } else { Collected::None },
        },
        None => {
            latency += cost.block_times[layers];
            let prob = workload::final_classify(sample, gt, params.temperature);
            InferenceOutcome {
                predicted: workload::argmax(&prob),
                exit_layer: layers,
                simulated_latency: latency,
                hit: false,
                score: None,
                collected: if workload::top_two_gap(&prob) > thresholds.delta {
                    Collected::MissSample
                } else {
                    Collected::None
                },
            }
        }
    };
    let observed = match params.label_oracle {
        LabelOracle::Predicted => outcome.predicted,
        LabelOracle::True => sample.true_label(),
    };
    state.observe(observed);
    outcome
}

/// Folds the frame's features into the update table:
/// `U ← V + β·U` for the bookkept class over the layers in scope.
pub fn collect_update<F: FrameFeatures + ?Sized>(
    state: &mut ClientState,
    outcome: &InferenceOutcome,
    sample: &mut F,
    params: &ClientParams,
) {
    let scope = match outcome.collected {
        Collected::None => return,
        Collected::HitSample => outcome.exit_layer + 1,
        Collected::MissSample => state.layers,
    };
    let class = match params.label_oracle {
        LabelOracle::Predicted => outcome.predicted,
        LabelOracle::True => sample.true_label(),
    };
    for j in 0..scope.min(state.layers) {
        let v = sample.layer(j);
        let slot = &mut state.update[class * state.layers + j];
        match slot {
            Some(u) => {
                for (u, x) in u.iter_mut().zip(v.as_slice()) {
                    *u = x + params.beta * *u;
                }
            }
            None => *slot = Some(v.as_slice().to_vec()),
        }
    }
}

/// EMA of the exit-slot indicator.
pub fn update_hit_stats(state: &mut ClientState, outcome: &InferenceOutcome, ema_weight: f64) {
    for (j, r) in state.hit_ratio.iter_mut().enumerate() {
        let indicator = if j == outcome.exit_layer { 1.0 } else { 0.0 };
        *r = (1.0 - ema_weight) * *r + ema_weight * indicator;
    }
}

/// Full per-frame client step: inference, collection and hit statistics.
#[allow(clippy::too_many_arguments)]
pub fn process_frame<F: FrameFeatures + ?Sized>(
    sample: &mut F,
    state: &mut ClientState,
    cache: &LocalCache,
    accumulator: &mut AccumulatorState,
    gt: &GroundTruth,
    cost: &CostProfile,
    thresholds: &Thresholds,
    params: &ClientParams,
) -> InferenceOutcome {
    let outcome = infer_frame(sample, state, cache, accumulator, gt, cost, thresholds, params);
    collect_update(state, &outcome, sample, params);
    update_hit_stats(state, &outcome, params.ema_weight);
    outcome
}

/// Normalizes the touched update entries, snapshots `φ`, and clears the
/// round-local state. `τ` carries over.
pub fn finalize_round(state: &mut ClientState) -> UploadPayload {
    let layers = state.layers;
    let touched = state
        .update
        .iter_mut()
        .enumerate()
        .filter_map(|(idx, u)| {
            let raw = u.take()?;
            SemanticVector::normalized(raw).map(|v| (idx / layers, idx % layers, v))
        })
        .collect();
    let phi = std::mem::replace(&mut state.phi, vec![0; state.classes]);
    state.round_counter += 1;
    UploadPayload {
        client_id: state.client_id,
        touched,
        phi,
        hit_ratio: state.hit_ratio.clone(),
        saved_time: state.saved_time.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::calibrate_default_costs;
    use crate::workload::{emit_sample, GeometryConfig, StreamSample};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(dim: usize, axis: usize) -> SemanticVector {
        SemanticVector::basis(dim, axis)
    }

    /// Three classes, one cache layer, noiseless vectors on orthogonal-ish
    /// axes so every similarity is known by hand.
    fn tiny_world() -> (GroundTruth, CostProfile) {
        let dim = 4;
        let mut centroids = Vec::new();
        for class in 0..3 {
            let layer0 =
                SemanticVector::normalized((0..dim).map(|k| if k == class { 1.0 } else { 0.5 }).collect()).unwrap();
            centroids.push(layer0);
            centroids.push(basis(dim, class));
        }
        let gt = GroundTruth::from_parts(3, 2, centroids, vec![0.0, 0.0], 0.0).unwrap();
        let cost = CostProfile { block_times: vec![10.0, 30.0], lookup_per_entry: 0.5, lookup_per_layer: 1.0 };
        (gt, cost)
    }

    fn cache_of(gt: &GroundTruth, classes: &[usize]) -> LocalCache {
        LocalCache::from_entries(1, classes.iter().map(|&c| (c, 0, gt.centroid(c, 0).clone()))).unwrap()
    }

    fn sample(gt: &GroundTruth, label: usize) -> StreamSample {
        emit_sample(gt, label, 0, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn empty_allocation_runs_full_model() {
        let (gt, cost) = tiny_world();
        let mut state = ClientState::new(0, 3, &cost);
        let cache = LocalCache::empty(1);
        let mut acc = cache.accumulator();
        let mut s = sample(&gt, 2);
        let out = infer_frame(
            &mut s,
            &mut state,
            &cache,
            &mut acc,
            &gt,
            &cost,
            &Thresholds::default(),
            &ClientParams::default(),
        );
        assert!(!out.hit);
        assert_eq!(out.exit_layer, 1);
        assert_eq!(out.simulated_latency, 40.0);
        assert_eq!(out.predicted, 2);
    }

    #[test]
    fn noiseless_sample_hits_first_layer() {
        // Sample of class 0 against entries {0, 1}: similarities are
        // 1 and (0.5·2 + 0.25·2)/1.75 = 6/7, so D = (1 − 6/7)/(6/7) = 1/6.
        let (gt, cost) = tiny_world();
        let mut state = ClientState::new(0, 3, &cost);
        let cache = cache_of(&gt, &[0, 1]);
        let mut acc = cache.accumulator();
        let mut s = sample(&gt, 0);
        let out = infer_frame(
            &mut s,
            &mut state,
            &cache,
            &mut acc,
            &gt,
            &cost,
            &Thresholds::default(),
            &ClientParams::default(),
        );
        assert!(out.hit);
        assert_eq!(out.exit_layer, 0);
        assert_eq!(out.predicted, 0);
        assert_abs_diff_eq!(out.score.unwrap(), 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.simulated_latency, 10.0 + 1.0 + 2.0 * 0.5, epsilon = 1e-12);
        // D = 1/6 > Γ = 0.1
        assert_eq!(out.collected, Collected::HitSample);
        assert_eq!(state.tau, vec![0, 1, 1]);
        assert_eq!(state.phi, vec![1, 0, 0]);
    }

    #[test]
    fn single_class_cache_never_hits() {
        let (gt, cost) = tiny_world();
        let mut state = ClientState::new(0, 3, &cost);
        let cache = cache_of(&gt, &[0]);
        let mut acc = cache.accumulator();
        let mut s = sample(&gt, 0);
        let out = infer_frame(
            &mut s,
            &mut state,
            &cache,
            &mut acc,
            &gt,
            &cost,
            &Thresholds::default(),
            &ClientParams::default(),
        );
        assert!(!out.hit);
        assert_abs_diff_eq!(out.simulated_latency, 10.0 + 1.5 + 30.0, epsilon = 1e-12);
    }

    #[test]
    fn infinite_threshold_matches_edge_only() {
        let cfg = GeometryConfig { classes: 8, layers: 5, dim: 16, ..GeometryConfig::default() };
        let gt = GroundTruth::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let cost = calibrate_default_costs(5, 8).unwrap();
        let full = LocalCache::from_entries(
            5,
            (0..8).flat_map(|c| (0..5).map(move |j| (c, j))).map(|(c, j)| (c, j, gt.centroid(c, j).clone())),
        )
        .unwrap();
        let never = Thresholds { theta: f64::INFINITY, ..Thresholds::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = ClientState::new(0, 8, &cost);
        let mut b = ClientState::new(0, 8, &cost);
        let none = LocalCache::empty(5);
        let (mut acc_a, mut acc_b) = (full.accumulator(), none.accumulator());
        for f in 0..50 {
            let s = emit_sample(&gt, f % 8, f as u64, &mut rng);
            let oa =
                infer_frame(&mut s.clone(), &mut a, &full, &mut acc_a, &gt, &cost, &never, &ClientParams::default());
            let ob =
                infer_frame(&mut s.clone(), &mut b, &none, &mut acc_b, &gt, &cost, &never, &ClientParams::default());
            assert_eq!(oa.predicted, ob.predicted);
            assert!(!oa.hit);
            // No lookup can succeed, so none is attempted or charged.
            assert_eq!(oa.simulated_latency, ob.simulated_latency);
            assert_abs_diff_eq!(ob.simulated_latency, cost.total_compute(), epsilon = 1e-12);
        }
    }

    #[test]
    fn accumulation_spans_only_active_layers() {
        // Two active layers separated by an inactive one: A = C_2 + α·C_0.
        let dim = 3;
        let c0 = basis(dim, 0);
        let c1 = basis(dim, 1);
        let mid = SemanticVector::normalized(vec![1.0, 1.0, 0.0]).unwrap();
        let centroids =
            vec![c0.clone(), c0.clone(), c0.clone(), c0.clone(), c1.clone(), c1.clone(), c1.clone(), c1.clone()];
        let gt = GroundTruth::from_parts(2, 4, centroids, vec![0.0; 4], 0.0).unwrap();
        let cost = calibrate_default_costs(3, 2).unwrap();
        let entries = vec![(0, 0, c0.clone()), (1, 0, c1.clone()), (0, 2, c0.clone()), (1, 2, c1.clone())];
        let cache = LocalCache::from_entries(3, entries).unwrap();
        let mut acc = cache.accumulator();
        let mut state = ClientState::new(0, 2, &cost);
        let mut s = StreamSample {
            true_label: 0,
            layer_vectors: vec![mid.clone(), c1.clone(), c0.clone(), c0.clone()],
            frame_index: 0,
        };
        let th = Thresholds { theta: 10.0, ..Thresholds::default() };
        let out = infer_frame(&mut s, &mut state, &cache, &mut acc, &gt, &cost, &th, &ClientParams::default());
        assert!(!out.hit);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(acc.value(0).unwrap(), 1.0 + 0.5 * h, epsilon = 1e-12);
        assert_abs_diff_eq!(acc.value(1).unwrap(), 0.0 + 0.5 * h, epsilon = 1e-12);
        assert_eq!(acc.last_active_layer(), Some(2));
    }

    #[test]
    fn collect_update_examples() {
        let cost = calibrate_default_costs(2, 4).unwrap();
        let params = ClientParams::default();
        let mut state = ClientState::new(0, 4, &cost);
        let v = basis(3, 0);
        let u = basis(3, 1);
        let mut s =
            StreamSample { true_label: 1, layer_vectors: vec![v.clone(), v.clone(), v.clone()], frame_index: 0 };
        let hit = InferenceOutcome {
            predicted: 1,
            exit_layer: 0,
            simulated_latency: 0.0,
            hit: true,
            score: Some(0.5),
            collected: Collected::HitSample,
        };
        collect_update(&mut state, &hit, &mut s, &params);
        assert_eq!(state.update_entry(1, 0).unwrap(), v.as_slice());
        assert!(state.update_entry(1, 1).is_none(), "scope ends at the hit layer");
        collect_update(&mut state, &hit, &mut s, &params);
        assert_abs_diff_eq!(state.update_entry(1, 0).unwrap()[0], 1.95, epsilon = 1e-12);

        // Orthogonal update: ‖V + 0.95·U‖ = √1.9025.
        let mut state = ClientState::new(0, 4, &cost);
        let mut su = StreamSample { true_label: 2, layer_vectors: vec![u.clone(); 3], frame_index: 0 };
        let miss = InferenceOutcome {
            predicted: 2,
            exit_layer: 2,
            hit: false,
            score: None,
            collected: Collected::MissSample,
            ..hit
        };
        collect_update(&mut state, &miss, &mut su, &params);
        let mut sv = StreamSample { true_label: 2, layer_vectors: vec![v.clone(); 3], frame_index: 0 };
        collect_update(&mut state, &miss, &mut sv, &params);
        state.phi[2] = 1;
        let payload = finalize_round(&mut state);
        assert_eq!(payload.touched.len(), 2, "miss samples cover every cache layer");
        let n = 1.9025f64.sqrt();
        assert_abs_diff_eq!(n, 1.37931, epsilon = 1e-5);
        let got = &payload.touched[0].2;
        assert_abs_diff_eq!(got.as_slice()[0], 1.0 / n, epsilon = 1e-12);
        assert_abs_diff_eq!(got.as_slice()[1], 0.95 / n, epsilon = 1e-12);
    }

    #[test]
    fn hit_stats_prior_and_fixed_points() {
        let cost = calibrate_default_costs(3, 4).unwrap();
        let mut state = ClientState::new(0, 4, &cost);
        assert!(state.hit_ratio.iter().all(|r| (r - 0.25).abs() < 1e-15));
        let mut out = InferenceOutcome {
            predicted: 0,
            exit_layer: 3,
            simulated_latency: 0.0,
            hit: false,
            score: None,
            collected: Collected::None,
        };
        for _ in 0..2000 {
            update_hit_stats(&mut state, &out, 0.05);
        }
        assert!((state.hit_ratio[3] - 1.0).abs() < 1e-9);
        assert!(state.hit_ratio[..3].iter().all(|r| *r < 1e-9));

        // Alternating exits: fixed points 1/(2−λ) and (1−λ)/(2−λ).
        for f in 0..2000 {
            out.exit_layer = f % 2;
            update_hit_stats(&mut state, &out, 0.05);
        }
        assert!((state.hit_ratio[0] - 0.5).abs() <= 0.05);
        assert!((state.hit_ratio[1] - 0.5).abs() <= 0.05);
    }

    #[test]
    fn finalize_round_resets_round_state() {
        let cost = calibrate_default_costs(2, 3).unwrap();
        let mut state = ClientState::new(4, 3, &cost);
        for c in [0, 0, 2] {
            state.observe(c);
        }
        let empty = finalize_round(&mut state);
        assert!(empty.touched.is_empty());
        assert_eq!(empty.phi, vec![2, 0, 1]);
        assert_eq!(empty.client_id, 4);
        assert_eq!(state.phi, vec![0, 0, 0]);
        assert_eq!(state.tau, vec![1, 3, 0]);
        assert_eq!(state.round_counter, 1);
        assert_eq!(empty.saved_time, cost.saved_time());
    }

    #[test]
    fn saved_time_matches_tail_compute() {
        let cost = calibrate_default_costs(4, 10).unwrap();
        let state = ClientState::new(0, 10, &cost);
        assert_eq!(state.saved_time[4], 0.0);
        assert_abs_diff_eq!(state.saved_time[0], 80.0, epsilon = 1e-9);
    }
}
