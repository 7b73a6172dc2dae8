//! Synthetic labeled feature streams: per-class centroids for every layer
//! slot, class distributions (uniform, Dirichlet non-IID, long-tail), batched
//! label sequences with temporal locality, and slow centroid drift.
//!
//! Slots `0..L` are cache layers; slot `L` is the final-classifier layer.

pub mod trace;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cachemath::{self, SemanticVector};
use crate::error::{CocaError, Result};
use crate::rng::{stream_rng, Stream};

/// Geometry of the synthetic feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub classes: usize,
    /// Number of cache layers `L`; the model has `L + 1` slots.
    pub layers: usize,
    pub dim: usize,
    /// Weight of the per-slot direction shared by every class. Zero gives
    /// independent centroids.
    pub shared_weight: f64,
    /// Class-specific weight at the first slot, rising linearly to
    /// `separation_deep` at the final slot.
    pub separation_shallow: f64,
    pub separation_deep: f64,
    /// Noise scale at the first slot, falling linearly to `noise_deep`.
    pub noise_shallow: f64,
    pub noise_deep: f64,
    pub drift_rate: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            classes: 50,
            layers: 34,
            dim: 64,
            shared_weight: 1.0,
            separation_shallow: 0.02,
            separation_deep: 0.4,
            noise_shallow: 0.8,
            noise_deep: 0.2,
            drift_rate: 0.0,
        }
    }
}

impl GeometryConfig {
    pub fn slots(&self) -> usize {
        self.layers + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(CocaError::validation("at least two classes are required"));
        }
        if self.layers < 1 {
            return Err(CocaError::validation("at least one cache layer is required"));
        }
        if self.dim < 2 {
            return Err(CocaError::validation("vector dimension must be at least 2"));
        }
        let nonneg = [
            ("shared_weight", self.shared_weight),
            ("separation_shallow", self.separation_shallow),
            ("separation_deep", self.separation_deep),
            ("noise_shallow", self.noise_shallow),
            ("noise_deep", self.noise_deep),
            ("drift_rate", self.drift_rate),
        ];
        if let Some((name, _)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(CocaError::validation(format!("{name} must be finite and non-negative")));
        }
        if self.shared_weight == 0.0 && self.separation_shallow == 0.0 {
            return Err(CocaError::validation("shared_weight and separation_shallow cannot both be zero"));
        }
        Ok(())
    }
}

fn lerp(a: f64, b: f64, slot: usize, slots: usize) -> f64 {
    if slots <= 1 {
        return b;
    }
    a + (b - a) * slot as f64 / (slots - 1) as f64
}

/// Uniformly random unit vector.
pub fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> SemanticVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = SemanticVector::normalized(v) {
            return u;
        }
    }
}

/// Class centroids per slot plus the per-slot noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    classes: usize,
    slots: usize,
    dim: usize,
    centroids: Vec<SemanticVector>,
    noise: Vec<f64>,
    drift_rate: f64,
}

impl GroundTruth {
    pub fn generate<R: Rng + ?Sized>(cfg: &GeometryConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let slots = cfg.slots();
        let shared: Vec<SemanticVector> = (0..slots).map(|_| random_direction(cfg.dim, rng)).collect();
        let mut own: Vec<Vec<SemanticVector>> =
            (0..cfg.classes).map(|_| (0..slots).map(|_| random_direction(cfg.dim, rng)).collect()).collect();
        // With room in the space, class directions are made orthogonal to
        // each other and to the shared direction, so every pair of classes
        // is equally similar at a given slot.
        if cfg.classes < cfg.dim {
            for (slot, common) in shared.iter().enumerate() {
                let mut basis = vec![common.as_slice().to_vec()];
                for dirs in own.iter_mut() {
                    let mut v = dirs[slot].as_slice().to_vec();
                    for b in &basis {
                        let proj = cachemath::dot(&v, b);
                        v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                    }
                    if let Some(u) = SemanticVector::normalized(v) {
                        basis.push(u.as_slice().to_vec());
                        dirs[slot] = u;
                    }
                }
            }
        }
        let mut centroids = Vec::with_capacity(cfg.classes * slots);
        for dirs in own {
            for (slot, (common, own)) in shared.iter().zip(dirs).enumerate() {
                // The classifier slot has no shared direction: its centroids
                // are independent, as for the logits of a trained model.
                if slot + 1 == slots {
                    centroids.push(own);
                    continue;
                }
                let sep = lerp(cfg.separation_shallow, cfg.separation_deep, slot, slots);
                let raw: Vec<f64> = common
                    .as_slice()
                    .iter()
                    .zip(own.as_slice())
                    .map(|(m, u)| cfg.shared_weight * m + sep * u)
                    .collect();
                centroids.push(SemanticVector::normalized(raw).unwrap_or(own));
            }
        }
        let noise = (0..slots).map(|s| lerp(cfg.noise_shallow, cfg.noise_deep, s, slots)).collect();
        Ok(GroundTruth { classes: cfg.classes, slots, dim: cfg.dim, centroids, noise, drift_rate: cfg.drift_rate })
    }

    /// Builds a ground truth from explicit centroids laid out class-major.
    pub fn from_parts(
        classes: usize,
        slots: usize,
        centroids: Vec<SemanticVector>,
        noise: Vec<f64>,
        drift_rate: f64,
    ) -> Result<Self> {
        if centroids.len() != classes * slots || noise.len() != slots || slots < 2 {
            return Err(CocaError::validation("ground truth shape mismatch"));
        }
        let dim = centroids[0].dim();
        if let Some(bad) = centroids.iter().find(|c| c.dim() != dim) {
            return Err(CocaError::DimensionMismatch { expected: dim, actual: bad.dim() });
        }
        Ok(GroundTruth { classes, slots, dim, centroids, noise, drift_rate })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of slots, `L + 1`.
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn layers(&self) -> usize {
        self.slots - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, class: usize, slot: usize) -> &SemanticVector {
        &self.centroids[class * self.slots + slot]
    }

    pub fn noise(&self, slot: usize) -> f64 {
        self.noise[slot]
    }

    pub fn noise_schedule(&self) -> &[f64] {
        &self.noise
    }

    pub fn drift_rate(&self) -> f64 {
        self.drift_rate
    }

    pub fn set_drift_rate(&mut self, rate: f64) {
        self.drift_rate = rate;
    }

    pub fn set_noise_schedule(&mut self, noise: Vec<f64>) -> Result<()> {
        if noise.len() != self.slots {
            return Err(CocaError::validation("noise schedule length must equal slot count"));
        }
        self.noise = noise;
        Ok(())
    }
}

/// Moves every centroid by `δ` along a fresh random direction, then
/// renormalizes.
pub fn apply_drift<R: Rng + ?Sized>(gt: &mut GroundTruth, rng: &mut R) {
    let delta = gt.drift_rate;
    if delta == 0.0 {
        return;
    }
    let dim = gt.dim;
    for c in gt.centroids.iter_mut() {
        let w = random_direction(dim, rng);
        let raw: Vec<f64> = c.as_slice().iter().zip(w.as_slice()).map(|(g, w)| g + delta * w).collect();
        if let Some(moved) = SemanticVector::normalized(raw) {
            *c = moved;
        }
    }
}

/// Draws one noisy feature vector of `label` at `slot`:
/// `normalize(G + σ·η)` with `η ~ N(0, I/d)`, so `σ` is a noise-to-signal
/// norm ratio independent of the dimension.
pub fn emit_layer<R: Rng + ?Sized>(gt: &GroundTruth, label: usize, slot: usize, rng: &mut R) -> SemanticVector {
    let centroid = gt.centroid(label, slot);
    let sigma = gt.noise(slot);
    if sigma == 0.0 {
        return centroid.clone();
    }
    let scale = sigma / (gt.dim as f64).sqrt();
    let raw: Vec<f64> = centroid
        .as_slice()
        .iter()
        .map(|g| {
            let eta: f64 = rng.sample(StandardNormal);
            g + scale * eta
        })
        .collect();
    SemanticVector::normalized(raw).unwrap_or_else(|| centroid.clone())
}

/// One labeled frame with a feature vector for every slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub true_label: usize,
    pub layer_vectors: Vec<SemanticVector>,
    pub frame_index: u64,
}

pub fn emit_sample<R: Rng + ?Sized>(gt: &GroundTruth, label: usize, frame_index: u64, rng: &mut R) -> StreamSample {
    let layer_vectors = (0..gt.slots).map(|s| emit_layer(gt, label, s, rng)).collect();
    StreamSample { true_label: label, layer_vectors, frame_index }
}

/// Read access to the per-slot features of one frame.
pub trait FrameFeatures {
    fn true_label(&self) -> usize;
    fn frame_index(&self) -> u64;
    fn layer(&mut self, slot: usize) -> &SemanticVector;
}

impl FrameFeatures for StreamSample {
    fn true_label(&self) -> usize {
        self.true_label
    }

    fn frame_index(&self) -> u64 {
        self.frame_index
    }

    fn layer(&mut self, slot: usize) -> &SemanticVector {
        &self.layer_vectors[slot]
    }
}

/// A frame whose slot vectors are drawn on first access.
///
/// Each slot has its own random stream keyed by `(seed, client, frame, slot)`,
/// so the vectors are identical no matter which slots a policy reads or in
/// what order.
pub struct LazyFrame<'a> {
    gt: &'a GroundTruth,
    seed: u64,
    client: u64,
    label: usize,
    frame_index: u64,
    vectors: Vec<Option<SemanticVector>>,
}

impl<'a> LazyFrame<'a> {
    pub fn new(gt: &'a GroundTruth, seed: u64, client: u64, label: usize, frame_index: u64) -> Self {
        LazyFrame { gt, seed, client, label, frame_index, vectors: vec![None; gt.slots] }
    }

    /// Draws every slot and returns the full sample.
    pub fn materialize(mut self) -> StreamSample {
        for s in 0..self.gt.slots {
            self.layer(s);
        }
        StreamSample {
            true_label: self.label,
            layer_vectors: self.vectors.into_iter().map(Option::unwrap).collect(),
            frame_index: self.frame_index,
        }
    }
}

impl FrameFeatures for LazyFrame<'_> {
    fn true_label(&self) -> usize {
        self.label
    }

    fn frame_index(&self) -> u64 {
        self.frame_index
    }

    fn layer(&mut self, slot: usize) -> &SemanticVector {
        let (gt, seed, client, label, frame) = (self.gt, self.seed, self.client, self.label, self.frame_index);
        self.vectors[slot].get_or_insert_with(|| {
            let mut rng = stream_rng(seed, Stream::FrameNoise, client, frame, slot as u64);
            emit_layer(gt, label, slot, &mut rng)
        })
    }
}

/// Full-model class probabilities: softmax of final-slot cosine similarity
/// over `temperature`.
pub fn final_classify<F: FrameFeatures + ?Sized>(sample: &mut F, gt: &GroundTruth, temperature: f64) -> Vec<f64> {
    let last = gt.slots - 1;
    let v = sample.layer(last).clone();
    let logits: Vec<f64> = (0..gt.classes).map(|c| v.dot(gt.centroid(c, last)) / temperature).collect();
    softmax(&logits)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Gap between the two largest entries.
pub fn top_two_gap(values: &[f64]) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in values {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    if second == f64::NEG_INFINITY {
        first
    } else {
        first - second
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistributionSource {
    Uniform,
    Dirichlet { p: f64 },
    LongTail { rho: f64 },
    Product { p: f64, rho: f64 },
}

/// Class probabilities summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    probs: Vec<f64>,
    source: DistributionSource,
}

impl ClassDistribution {
    pub fn uniform(classes: usize) -> Self {
        ClassDistribution { probs: vec![1.0 / classes as f64; classes], source: DistributionSource::Uniform }
    }

    pub fn from_weights(weights: Vec<f64>, source: DistributionSource) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(CocaError::validation("class weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(CocaError::validation("class weights sum to zero"));
        }
        Ok(ClassDistribution { probs: weights.into_iter().map(|w| w / total).collect(), source })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn source(&self) -> DistributionSource {
        self.source
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// Elementwise product of two distributions, renormalized.
    pub fn product(&self, other: &ClassDistribution) -> Result<Self> {
        if self.classes() != other.classes() {
            return Err(CocaError::DimensionMismatch { expected: self.classes(), actual: other.classes() });
        }
        let (p, rho) = match (self.source, other.source) {
            (DistributionSource::Dirichlet { p }, DistributionSource::LongTail { rho })
            | (DistributionSource::LongTail { rho }, DistributionSource::Dirichlet { p }) => (p, rho),
            _ => (0.0, 1.0),
        };
        let weights = self.probs.iter().zip(&other.probs).map(|(a, b)| a * b).collect();
        ClassDistribution::from_weights(weights, DistributionSource::Product { p, rho })
    }
}

/// Exponentially decaying class frequencies with `π_0 / π_{I−1} = ρ`.
pub fn build_longtail(classes: usize, rho: f64) -> Result<ClassDistribution> {
    if classes < 2 {
        return Err(CocaError::validation("long-tail distribution needs at least two classes"));
    }
    if !(rho.is_finite() && rho >= 1.0) {
        return Err(CocaError::validation(format!("imbalance ratio must be >= 1, got {rho}")));
    }
    let span = (classes - 1) as f64;
    let weights = (0..classes).map(|i| rho.powf(-(i as f64) / span)).collect();
    ClassDistribution::from_weights(weights, DistributionSource::LongTail { rho })
}

/// Per-client class skew: uniform when `p = 0`, otherwise a symmetric
/// Dirichlet draw with concentration `1/p`.
pub fn build_noniid<R: Rng + ?Sized>(classes: usize, p: f64, rng: &mut R) -> Result<ClassDistribution> {
    if !(p.is_finite() && p >= 0.0) {
        return Err(CocaError::validation(format!("non-IID level must be >= 0, got {p}")));
    }
    if classes == 0 {
        return Err(CocaError::validation("no classes"));
    }
    if p == 0.0 {
        return Ok(ClassDistribution::uniform(classes));
    }
    let concentration = 1.0 / p;
    // Gamma(ε) = Gamma(ε+1)·U^{1/ε}, evaluated in log space so that small
    // concentrations do not underflow every component to zero.
    let shifted =
        Gamma::new(concentration + 1.0, 1.0).map_err(|e| CocaError::validation(format!("gamma parameters: {e}")))?;
    let logs: Vec<f64> = (0..classes)
        .map(|_| {
            let g: f64 = shifted.sample(rng);
            let u: f64 = 1.0 - rng.random::<f64>();
            g.ln() + u.ln() / concentration
        })
        .collect();
    let mut dist = ClassDistribution::from_weights(softmax(&logs), DistributionSource::Uniform)?;
    dist.source = DistributionSource::Dirichlet { p };
    Ok(dist)
}

/// One batch: a single class drawn from `dist`, repeated `batch_len` times.
pub fn next_batch<R: Rng + ?Sized>(dist: &ClassDistribution, batch_len: usize, rng: &mut R) -> Vec<usize> {
    let class = sample_class(dist, rng);
    vec![class; batch_len.max(1)]
}

fn sample_class<R: Rng + ?Sized>(dist: &ClassDistribution, rng: &mut R) -> usize {
    WeightedIndex::new(dist.probs()).expect("class distribution is normalized").sample(rng)
}

/// Endless label sequence made of consecutive batches.
#[derive(Debug, Clone)]
pub struct LabelStream<R> {
    sampler: WeightedIndex<f64>,
    batch_len: usize,
    rng: R,
    current: usize,
    remaining: usize,
}

impl<R: Rng> LabelStream<R> {
    pub fn new(dist: &ClassDistribution, batch_len: usize, rng: R) -> Self {
        LabelStream {
            sampler: WeightedIndex::new(dist.probs()).expect("class distribution is normalized"),
            batch_len: batch_len.max(1),
            rng,
            current: 0,
            remaining: 0,
        }
    }
}

impl<R: Rng> Iterator for LabelStream<R> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            self.current = self.sampler.sample(&mut self.rng);
            self.remaining = self.batch_len;
        }
        self.remaining -= 1;
        Some(self.current)
    }
}

/// Mean of the centroid-to-sample cosine at each slot, used by tests and
/// diagnostics.
pub fn mean_centroid_alignment<R: Rng + ?Sized>(gt: &GroundTruth, samples: usize, rng: &mut R) -> Vec<f64> {
    let mut sums = vec![0.0; gt.slots];
    for n in 0..samples {
        let label = n % gt.classes;
        for (slot, sum) in sums.iter_mut().enumerate() {
            let v = emit_layer(gt, label, slot, rng);
            *sum += cachemath::dot(v.as_slice(), gt.centroid(label, slot).as_slice());
        }
    }
    sums.into_iter().map(|s| s / samples as f64).collect()
}
