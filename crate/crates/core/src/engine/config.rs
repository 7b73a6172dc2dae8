//! Scenario configuration: a flat `key = value` text format with dotted keys,
//! or the equivalent nested JSON document.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::client::{ClientParams, LabelOracle, Thresholds};
use crate::error::{CocaError, Result};
use crate::server::Policy;
use crate::workload::GeometryConfig;

/// Where ACA takes its per-layer hit ratios from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitStatsSource {
    /// Isolated per-layer hit ratio measured by the server on calibration
    /// frames at start-up.
    Profile,
    /// The requesting client's own exit-frequency estimate.
    Client,
    /// Mean of every client's exit-frequency estimate.
    Pooled,
}

impl FromStr for HitStatsSource {
    type Err = CocaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "profile" => Ok(HitStatsSource::Profile),
            "client" => Ok(HitStatsSource::Client),
            "pooled" => Ok(HitStatsSource::Pooled),
            other => Err(CocaError::validation(format!("unknown hit-stats source `{other}`"))),
        }
    }
}

impl HitStatsSource {
    fn name(self) -> &'static str {
        match self {
            HitStatsSource::Profile => "profile",
            HitStatsSource::Client => "client",
            HitStatsSource::Pooled => "pooled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    pub shared_weight: f64,
    pub separation_shallow: f64,
    pub separation_deep: f64,
    pub noise_shallow: f64,
    pub noise_deep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    /// Non-IID level; 0 is IID.
    pub p: f64,
    /// Long-tail imbalance ratio; 1 disables the long tail.
    pub rho: f64,
    pub batch_len: usize,
    /// Centroid drift per round.
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorSpec {
    /// One policy for every client, or one per client.
    pub policies: Vec<Policy>,
    /// Entries per layer for the replacement baselines.
    pub capacity: usize,
    /// Client memory budget; `None` derives `capacity × fixed layers × m`.
    pub budget_bytes: Option<u64>,
    /// Layers used by the non-ACA policies; `None` spreads
    /// `fixed_layer_count` layers evenly over the depth.
    pub fixed_layers: Option<Vec<usize>>,
    pub fixed_layer_count: usize,
    pub hit_stats: HitStatsSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerSpec {
    pub gcu: bool,
    /// When false every client gets the fixed-layer full allocation.
    pub dca: bool,
    pub gamma: f64,
    pub calibration_per_class: usize,
    pub profile_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub events: bool,
    pub trace: bool,
    pub snapshot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub clients: usize,
    pub classes: usize,
    pub layers: usize,
    pub vector_dim: usize,
    pub rounds: u64,
    pub frames_per_round: u64,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub reference_classes: usize,
    pub transfer_ms_per_kb: f64,
    pub score_decay: f64,
    pub coverage_target: f64,
    pub thresholds: Thresholds,
    pub client: ClientParams,
    pub geometry: GeometrySpec,
    pub workload: WorkloadSpec,
    pub allocator: AllocatorSpec,
    pub server: ServerSpec,
    pub output: OutputSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        let g = GeometryConfig::default();
        Scenario {
            clients: 4,
            classes: 50,
            layers: 8,
            vector_dim: 64,
            rounds: 10,
            frames_per_round: 300,
            seed: 1,
            workers: 0,
            reference_classes: 50,
            transfer_ms_per_kb: 0.0,
            score_decay: 0.2,
            coverage_target: 0.95,
            thresholds: Thresholds::default(),
            client: ClientParams::default(),
            geometry: GeometrySpec {
                shared_weight: g.shared_weight,
                separation_shallow: g.separation_shallow,
                separation_deep: g.separation_deep,
                noise_shallow: g.noise_shallow,
                noise_deep: g.noise_deep,
            },
            workload: WorkloadSpec { p: 0.0, rho: 1.0, batch_len: 30, drift: 0.0 },
            allocator: AllocatorSpec {
                policies: vec![Policy::Aca],
                capacity: 30,
                budget_bytes: None,
                fixed_layers: None,
                fixed_layer_count: 3,
                hit_stats: HitStatsSource::Profile,
            },
            server: ServerSpec { gcu: true, dca: true, gamma: 0.99, calibration_per_class: 50, profile_per_class: 10 },
            output: OutputSpec { events: false, trace: false, snapshot: false },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e| CocaError::validation(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn is_auto(value: &str) -> bool {
    matches!(value.trim(), "" | "auto")
}

impl Scenario {
    /// Every configuration key.
    pub const KEYS: &'static [&'static str] = &[
        "clients",
        "classes",
        "layers",
        "vector_dim",
        "rounds",
        "frames_per_round",
        "seed",
        "workers",
        "reference_classes",
        "transfer_ms_per_kb",
        "score_decay",
        "coverage_target",
        "label_oracle",
        "thresholds.theta",
        "thresholds.gamma",
        "thresholds.delta",
        "client.alpha",
        "client.beta",
        "client.ema_weight",
        "client.temperature",
        "geometry.shared_weight",
        "geometry.separation_shallow",
        "geometry.separation_deep",
        "geometry.noise_shallow",
        "geometry.noise_deep",
        "workload.p",
        "workload.rho",
        "workload.batch_len",
        "workload.drift",
        "allocator.policy",
        "allocator.capacity",
        "allocator.budget_bytes",
        "allocator.fixed_layers",
        "allocator.fixed_layer_count",
        "allocator.hit_stats",
        "server.gcu",
        "server.dca",
        "server.gamma",
        "server.calibration_per_class",
        "server.profile_per_class",
        "output.events",
        "output.trace",
        "output.snapshot",
    ];

    /// Sets one key. Unknown keys are reported as [`CocaError::InvalidKeys`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim();
        match k {
            "clients" => self.clients = parse(k, value)?,
            "classes" => self.classes = parse(k, value)?,
            "layers" => self.layers = parse(k, value)?,
            "vector_dim" => self.vector_dim = parse(k, value)?,
            "rounds" => self.rounds = parse(k, value)?,
            "frames_per_round" => self.frames_per_round = parse(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "workers" => self.workers = parse(k, value)?,
            "reference_classes" => self.reference_classes = parse(k, value)?,
            "transfer_ms_per_kb" => self.transfer_ms_per_kb = parse(k, value)?,
            "score_decay" => self.score_decay = parse(k, value)?,
            "coverage_target" => self.coverage_target = parse(k, value)?,
            "label_oracle" => {
                self.client.label_oracle = match value.trim().to_ascii_lowercase().as_str() {
                    "predicted" => LabelOracle::Predicted,
                    "true" => LabelOracle::True,
                    other => return Err(CocaError::validation(format!("{k}: unknown oracle `{other}`"))),
                }
            }
            "thresholds.theta" => self.thresholds.theta = parse(k, value)?,
            "thresholds.gamma" => self.thresholds.gamma = parse(k, value)?,
            "thresholds.delta" => self.thresholds.delta = parse(k, value)?,
            "client.alpha" => self.client.alpha = parse(k, value)?,
            "client.beta" => self.client.beta = parse(k, value)?,
            "client.ema_weight" => self.client.ema_weight = parse(k, value)?,
            "client.temperature" => self.client.temperature = parse(k, value)?,
            "geometry.shared_weight" => self.geometry.shared_weight = parse(k, value)?,
            "geometry.separation_shallow" => self.geometry.separation_shallow = parse(k, value)?,
            "geometry.separation_deep" => self.geometry.separation_deep = parse(k, value)?,
            "geometry.noise_shallow" => self.geometry.noise_shallow = parse(k, value)?,
            "geometry.noise_deep" => self.geometry.noise_deep = parse(k, value)?,
            "workload.p" => self.workload.p = parse(k, value)?,
            "workload.rho" => self.workload.rho = parse(k, value)?,
            "workload.batch_len" => self.workload.batch_len = parse(k, value)?,
            "workload.drift" => self.workload.drift = parse(k, value)?,
            "allocator.policy" => self.allocator.policies = parse_list(k, value)?,
            "allocator.capacity" => self.allocator.capacity = parse(k, value)?,
            "allocator.budget_bytes" => {
                self.allocator.budget_bytes = if is_auto(value) { None } else { Some(parse(k, value)?) }
            }
            "allocator.fixed_layers" => {
                self.allocator.fixed_layers = if is_auto(value) { None } else { Some(parse_list(k, value)?) }
            }
            "allocator.fixed_layer_count" => self.allocator.fixed_layer_count = parse(k, value)?,
            "allocator.hit_stats" => self.allocator.hit_stats = parse(k, value)?,
            "server.gcu" => self.server.gcu = parse(k, value)?,
            "server.dca" => self.server.dca = parse(k, value)?,
            "server.gamma" => self.server.gamma = parse(k, value)?,
            "server.calibration_per_class" => self.server.calibration_per_class = parse(k, value)?,
            "server.profile_per_class" => self.server.profile_per_class = parse(k, value)?,
            "output.events" => self.output.events = parse(k, value)?,
            "output.trace" => self.output.trace = parse(k, value)?,
            "output.snapshot" => self.output.snapshot = parse(k, value)?,
            _ => return Err(CocaError::InvalidKeys(vec![k.to_string()])),
        }
        Ok(())
    }

    /// Current value of every key, in [`Scenario::KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".to_string());
        let oracle = match self.client.label_oracle {
            LabelOracle::Predicted => "predicted",
            LabelOracle::True => "true",
        };
        let values = vec![
            self.clients.to_string(),
            self.classes.to_string(),
            self.layers.to_string(),
            self.vector_dim.to_string(),
            self.rounds.to_string(),
            self.frames_per_round.to_string(),
            self.seed.to_string(),
            self.workers.to_string(),
            self.reference_classes.to_string(),
            self.transfer_ms_per_kb.to_string(),
            self.score_decay.to_string(),
            self.coverage_target.to_string(),
            oracle.to_string(),
            self.thresholds.theta.to_string(),
            self.thresholds.gamma.to_string(),
            self.thresholds.delta.to_string(),
            self.client.alpha.to_string(),
            self.client.beta.to_string(),
            self.client.ema_weight.to_string(),
            self.client.temperature.to_string(),
            self.geometry.shared_weight.to_string(),
            self.geometry.separation_shallow.to_string(),
            self.geometry.separation_deep.to_string(),
            self.geometry.noise_shallow.to_string(),
            self.geometry.noise_deep.to_string(),
            self.workload.p.to_string(),
            self.workload.rho.to_string(),
            self.workload.batch_len.to_string(),
            self.workload.drift.to_string(),
            join(&self.allocator.policies),
            self.allocator.capacity.to_string(),
            opt(self.allocator.budget_bytes.map(|b| b.to_string())),
            opt(self.allocator.fixed_layers.as_deref().map(join)),
            self.allocator.fixed_layer_count.to_string(),
            self.allocator.hit_stats.name().to_string(),
            self.server.gcu.to_string(),
            self.server.dca.to_string(),
            self.server.gamma.to_string(),
            self.server.calibration_per_class.to_string(),
            self.server.profile_per_class.to_string(),
            self.output.events.to_string(),
            self.output.trace.to_string(),
            self.output.snapshot.to_string(),
        ];
        Self::KEYS.iter().copied().zip(values).collect()
    }

    /// Applies pairs on top of the defaults. All unknown keys are reported
    /// together; value errors are reported for the first bad key.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self> {
        let mut s = Scenario::default();
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            match s.set(k.as_ref(), v.as_ref()) {
                Err(CocaError::InvalidKeys(keys)) => unknown.extend(keys),
                other => other?,
            }
        }
        if !unknown.is_empty() {
            return Err(CocaError::InvalidKeys(unknown));
        }
        s.validate()?;
        Ok(s)
    }

    /// Parses the flat format: `key = value` per line, `#` comments.
    pub fn parse_flat(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CocaError::format("config", format!("line {}: expected `key = value`", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Scenario::from_pairs(pairs)
    }

    /// Parses a JSON document; nested objects become dotted keys and arrays
    /// become comma-separated lists.
    pub fn parse_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let mut pairs = Vec::new();
        flatten("", &root, &mut pairs)?;
        Scenario::from_pairs(pairs)
    }

    /// Reads a config file, choosing the format by content.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            Scenario::parse_json(&text)
        } else {
            Scenario::parse_flat(&text)
        }
    }

    /// The flat-format rendering of this scenario.
    pub fn to_flat(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn geometry_config(&self) -> GeometryConfig {
        GeometryConfig {
            classes: self.classes,
            layers: self.layers,
            dim: self.vector_dim,
            shared_weight: self.geometry.shared_weight,
            separation_shallow: self.geometry.separation_shallow,
            separation_deep: self.geometry.separation_deep,
            noise_shallow: self.geometry.noise_shallow,
            noise_deep: self.geometry.noise_deep,
            drift_rate: self.workload.drift,
        }
    }

    pub fn policy_of(&self, client: usize) -> Policy {
        let ps = &self.allocator.policies;
        if ps.len() == 1 {
            ps[0]
        } else {
            ps[client]
        }
    }

    /// Layers used by the fixed-layer policies.
    pub fn fixed_layers(&self) -> Vec<usize> {
        match &self.allocator.fixed_layers {
            Some(layers) => layers.clone(),
            None => spread_layers(self.layers, self.allocator.fixed_layer_count),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry_config().validate()?;
        if self.clients == 0 {
            return Err(CocaError::validation("clients must be positive"));
        }
        if self.frames_per_round == 0 {
            return Err(CocaError::validation("frames_per_round must be positive"));
        }
        if self.reference_classes == 0 {
            return Err(CocaError::validation("reference_classes must be positive"));
        }
        if self.workload.batch_len == 0 {
            return Err(CocaError::validation("workload.batch_len must be positive"));
        }
        if !(self.workload.rho.is_finite() && self.workload.rho >= 1.0) {
            return Err(CocaError::validation("workload.rho must be >= 1"));
        }
        if !(self.workload.p.is_finite() && self.workload.p >= 0.0) {
            return Err(CocaError::validation("workload.p must be >= 0"));
        }
        let ps = self.allocator.policies.len();
        if ps != 1 && ps != self.clients {
            return Err(CocaError::validation(format!(
                "allocator.policy lists {ps} policies for {} clients",
                self.clients
            )));
        }
        if let Some(bad) = self.fixed_layers().into_iter().find(|&j| j >= self.layers) {
            return Err(CocaError::validation(format!("allocator.fixed_layers: layer {bad} out of range")));
        }
        if self.thresholds.theta.is_nan() || self.thresholds.theta < 0.0 {
            return Err(CocaError::validation("thresholds.theta must be >= 0"));
        }
        if self.client.temperature.is_nan() || self.client.temperature <= 0.0 {
            return Err(CocaError::validation("client.temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.coverage_target) {
            return Err(CocaError::validation("coverage_target must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.client.ema_weight) {
            return Err(CocaError::validation("client.ema_weight must lie in [0, 1]"));
        }
        if !(self.transfer_ms_per_kb.is_finite() && self.transfer_ms_per_kb >= 0.0) {
            return Err(CocaError::validation("transfer_ms_per_kb must be >= 0"));
        }
        Ok(())
    }
}

/// `count` layer indices spread evenly over `0..layers`.
pub fn spread_layers(layers: usize, count: usize) -> Vec<usize> {
    let count = count.min(layers);
    let mut out: Vec<usize> = (0..count).map(|t| ((t as f64 + 0.5) * layers as f64 / count as f64) as usize).collect();
    out.dedup();
    out
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) -> Result<()> {
    let scalar = |v: &Value| -> Result<String> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            Value::Null => Ok(String::new()),
            _ => Err(CocaError::format("config", format!("{prefix}: nested value in list"))),
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out)?;
            }
        }
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            out.push((prefix.to_string(), parts.join(",")));
        }
        other => {
            if prefix.is_empty() {
                return Err(CocaError::format("config", "top-level JSON value must be an object"));
            }
            out.push((prefix.to_string(), scalar(other)?));
        }
    }
    Ok(())
}
