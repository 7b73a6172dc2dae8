//! Round-based orchestration of one server and many clients.
//!
//! Each round every client sends a cache request, receives an allocation
//! computed against the same table snapshot, processes its frames, and
//! uploads its update table. Clients run in parallel; the server applies
//! uploads in client-id order, then drifts the ground truth once.

pub mod config;
pub mod output;
pub mod protocol;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::AllocationMatrix;
use crate::client::{self, ClientState, Collected, LabelOracle, LocalCache};
use crate::cost::{calibrate_default_costs, CostProfile, MetricsTally, RunMetrics};
use crate::error::{CocaError, Result};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::server::{
    aca_allocate, baseline_allocate, gcu_apply, init_global_cache, layer_hit_profile, AcaInput, AcaParams,
    BaselineState, GlobalCacheTable, Policy,
};
use crate::workload::trace::{Trace, TraceRecord};
use crate::workload::{
    apply_drift, build_longtail, build_noniid, ClassDistribution, GroundTruth, LabelStream, LazyFrame,
};

pub use config::{spread_layers, HitStatsSource, Scenario};
pub use protocol::{CacheAllocation, CacheRequest, ProtocolCounts, RoundProtocolMessage};

/// Client id used for the server's calibration stream.
const CALIBRATION_CLIENT: u64 = u64::MAX;

/// One line of the per-frame event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub round: u64,
    pub frame_index: u64,
    pub client_id: usize,
    pub true_label: usize,
    pub predicted: usize,
    pub exit_layer: usize,
    pub latency_ms: f64,
    pub hit: bool,
    pub collected: Collected,
}

/// Metrics of one client in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundRecord {
    pub round: u64,
    pub client_id: usize,
    pub policy: Policy,
    pub metrics: RunMetrics,
    pub cache_entries: usize,
    pub active_layers: Vec<usize>,
    pub collected: u64,
    /// FNV-1a hash of the round's true labels.
    pub label_checksum: u64,
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u64,
    pub records: Vec<ClientRoundRecord>,
    pub events: Vec<FrameEvent>,
    /// Label records, filled when trace output is enabled.
    pub labels: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub records: Vec<ClientRoundRecord>,
    pub per_client: Vec<RunMetrics>,
    pub aggregate: RunMetrics,
    pub protocol: ProtocolCounts,
    pub events: Vec<FrameEvent>,
    pub trace: Option<Trace>,
    pub table: GlobalCacheTable,
    /// Latency of a frame that runs the full model without lookups.
    pub edge_only_latency_ms: f64,
}

struct ClientRuntime {
    state: ClientState,
    policy: Policy,
    labels: LabelStream<ChaCha8Rng>,
    baseline: Option<BaselineState>,
    next_frame: u64,
    tally: MetricsTally,
}

struct ClientRoundOutput {
    record: ClientRoundRecord,
    upload: client::UploadPayload,
    events: Vec<FrameEvent>,
    labels: Vec<TraceRecord>,
    messages: [RoundProtocolMessage; 2],
}

/// Server, clients and ground truth of a running scenario.
pub struct Simulation {
    scenario: Scenario,
    cost: CostProfile,
    gt: GroundTruth,
    table: GlobalCacheTable,
    profile: Vec<f64>,
    fixed_layers: Vec<usize>,
    budget_bytes: u64,
    clients: Vec<ClientRuntime>,
    protocol: ProtocolCounts,
    round: u64,
    pool: rayon::ThreadPool,
}

fn fnv1a(labels: impl IntoIterator<Item = usize>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for l in labels {
        for b in (l as u32).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Class distribution of one client: long tail times Dirichlet skew.
pub fn client_distribution(scenario: &Scenario, client: usize) -> Result<ClassDistribution> {
    let mut rng = stream_rng(scenario.seed, Stream::ClientDistribution, client as u64, 0, 0);
    let skew = build_noniid(scenario.classes, scenario.workload.p, &mut rng)?;
    if scenario.workload.rho == 1.0 {
        return Ok(skew);
    }
    let tail = build_longtail(scenario.classes, scenario.workload.rho)?;
    if scenario.workload.p == 0.0 {
        Ok(tail)
    } else {
        tail.product(&skew)
    }
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let cost = calibrate_default_costs(scenario.layers, scenario.reference_classes)?;
        let mut centroid_rng = stream_rng(scenario.seed, Stream::Centroids, 0, 0, 0);
        let gt = GroundTruth::generate(&scenario.geometry_config(), &mut centroid_rng)?;

        let calib_seed = derive_seed(scenario.seed, Stream::Calibration, 0, 0, 0);
        let per_class = scenario.server.calibration_per_class as u64;
        let calibration = |n: u64| {
            let gt = &gt;
            (0..scenario.classes).flat_map(move |c| {
                (0..n).map(move |i| LazyFrame::new(gt, calib_seed, CALIBRATION_CLIENT, c, c as u64 * per_class + i))
            })
        };
        let table = init_global_cache(scenario.classes, scenario.layers, scenario.vector_dim, calibration(per_class))?;
        let needs_profile = scenario.allocator.hit_stats == HitStatsSource::Profile
            && scenario.allocator.policies.contains(&Policy::Aca)
            && scenario.server.dca;
        let profile = if needs_profile {
            let n = scenario.server.profile_per_class.min(scenario.server.calibration_per_class) as u64;
            layer_hit_profile(&table, calibration(n), scenario.thresholds.theta)
        } else {
            vec![0.0; scenario.layers + 1]
        };

        let fixed_layers = scenario.fixed_layers();
        let budget_bytes = scenario
            .allocator
            .budget_bytes
            .unwrap_or(scenario.allocator.capacity as u64 * fixed_layers.len() as u64 * table.entry_bytes());
        let clients = (0..scenario.clients)
            .map(|k| {
                let dist = client_distribution(&scenario, k)?;
                let rng = stream_rng(scenario.seed, Stream::ClientLabels, k as u64, 0, 0);
                let policy = scenario.policy_of(k);
                let baseline = policy.is_replacement().then(|| {
                    BaselineState::new(
                        policy,
                        scenario.allocator.capacity,
                        stream_rng(scenario.seed, Stream::Baseline, k as u64, 0, 0),
                    )
                });
                Ok(ClientRuntime {
                    state: ClientState::new(k, scenario.classes, &cost),
                    policy,
                    labels: LabelStream::new(&dist, scenario.workload.batch_len, rng),
                    baseline,
                    next_frame: 0,
                    tally: MetricsTally::new(scenario.layers + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(scenario.workers)
            .build()
            .map_err(|e| CocaError::validation(format!("worker pool: {e}")))?;
        Ok(Simulation {
            scenario,
            cost,
            gt,
            table,
            profile,
            fixed_layers,
            budget_bytes,
            clients,
            protocol: ProtocolCounts::default(),
            round: 0,
            pool,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn cost(&self) -> &CostProfile {
        &self.cost
    }

    pub fn table(&self) -> &GlobalCacheTable {
        &self.table
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    /// Server-side per-layer hit profile used by ACA.
    pub fn hit_profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn budget_bytes(&self) -> u64 {
        self.budget_bytes
    }

    pub fn fixed_layers(&self) -> &[usize] {
        &self.fixed_layers
    }

    pub fn protocol(&self) -> ProtocolCounts {
        self.protocol
    }

    pub fn client_state(&self, client: usize) -> &ClientState {
        &self.clients[client].state
    }

    fn pooled_hit_ratio(&self) -> Vec<f64> {
        let slots = self.scenario.layers + 1;
        let n = self.clients.len() as f64;
        (0..slots).map(|j| self.clients.iter().map(|c| c.state.hit_ratio[j]).sum::<f64>() / n).collect()
    }

    /// Allocation for one request against the current table.
    fn allocate(&self, rt: &ClientRuntime, request: &CacheRequest, pooled: &[f64]) -> Result<AllocationMatrix> {
        let (classes, layers) = (self.scenario.classes, self.scenario.layers);
        if !self.scenario.server.dca && rt.policy != Policy::EdgeOnly {
            return Ok(baseline_allocate(Policy::FixedAll, None, classes, layers, &self.fixed_layers));
        }
        if rt.policy != Policy::Aca {
            return Ok(baseline_allocate(rt.policy, rt.baseline.as_ref(), classes, layers, &self.fixed_layers));
        }
        let hit_ratio = match self.scenario.allocator.hit_stats {
            HitStatsSource::Profile => &self.profile[..],
            HitStatsSource::Client => &request.hit_ratio[..],
            HitStatsSource::Pooled => pooled,
        };
        let entry_bytes = vec![self.table.entry_bytes(); layers];
        let input = AcaInput {
            global_freq: &self.table.global_freq,
            tau: &request.tau,
            hit_ratio,
            saved_time: &request.saved_time,
            budget_bytes: request.budget_bytes,
            entry_bytes: &entry_bytes,
        };
        let params = AcaParams {
            score_decay: self.scenario.score_decay,
            coverage_target: self.scenario.coverage_target,
            frames_per_round: self.scenario.frames_per_round,
        };
        Ok(aca_allocate(&input, &params)?.allocation)
    }

    /// Runs one full round and returns its per-client records.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round;
        let pooled = self.pooled_hit_ratio();
        let requests: Vec<CacheRequest> = self
            .clients
            .iter()
            .map(|rt| CacheRequest {
                client_id: rt.state.client_id,
                tau: rt.state.tau.clone(),
                hit_ratio: rt.state.hit_ratio.clone(),
                saved_time: rt.state.saved_time.clone(),
                budget_bytes: self.budget_bytes,
            })
            .collect();
        let allocations = requests
            .iter()
            .zip(&self.clients)
            .map(|(req, rt)| self.allocate(rt, req, &pooled))
            .collect::<Result<Vec<_>>>()?;

        let mut clients = std::mem::take(&mut self.clients);
        let outputs: Vec<ClientRoundOutput> = {
            let this = &*self;
            this.pool.install(|| {
                clients
                    .par_iter_mut()
                    .zip(requests.into_par_iter().zip(allocations.into_par_iter()))
                    .map(|(rt, (req, x))| this.run_client_round(round, rt, req, x))
                    .collect()
            })
        };
        self.clients = clients;

        let mut report =
            RoundReport { round, records: Vec::with_capacity(outputs.len()), events: Vec::new(), labels: Vec::new() };
        for out in outputs {
            for m in &out.messages {
                self.protocol.record(m);
            }
            let upload = RoundProtocolMessage::UpdateUpload(out.upload);
            self.protocol.record(&upload);
            let RoundProtocolMessage::UpdateUpload(payload) = upload else { unreachable!() };
            if self.scenario.server.gcu {
                gcu_apply(&mut self.table, &payload, self.scenario.server.gamma)?;
            } else {
                self.table.add_frequencies(&payload.phi);
            }
            report.records.push(out.record);
            report.events.extend(out.events);
            report.labels.extend(out.labels);
        }
        if self.gt.drift_rate() > 0.0 {
            apply_drift(&mut self.gt, &mut stream_rng(self.scenario.seed, Stream::Drift, round, 0, 0));
        }
        self.round += 1;
        Ok(report)
    }

    fn run_client_round(
        &self,
        round: u64,
        rt: &mut ClientRuntime,
        request: CacheRequest,
        allocation: AllocationMatrix,
    ) -> ClientRoundOutput {
        let sc = &self.scenario;
        let client_id = rt.state.client_id;
        let cache: LocalCache = self.table.materialize(&allocation);
        let shipped_bytes = cache.entry_count() as u64 * self.table.entry_bytes();
        let reply = CacheAllocation {
            client_id,
            allocation: cache.allocation(sc.classes),
            shipped_entries: cache.entry_count(),
            shipped_bytes,
        };
        let active_layers = reply.allocation.active_layers();
        rt.state.allocation = reply.allocation.clone();

        let mut tally = MetricsTally::new(sc.layers + 1);
        tally.cache_bytes_used = shipped_bytes;
        tally.total_latency += sc.transfer_ms_per_kb * shipped_bytes as f64 / 1024.0;
        let mut accumulator = cache.accumulator();
        let mut events = Vec::new();
        let mut labels = Vec::new();
        let mut true_labels = Vec::with_capacity(sc.frames_per_round as usize);
        let mut collected = 0;
        for _ in 0..sc.frames_per_round {
            let label = rt.labels.next().expect("label stream is endless");
            let frame_index = rt.next_frame;
            rt.next_frame += 1;
            let mut frame = LazyFrame::new(&self.gt, sc.seed, client_id as u64, label, frame_index);
            let outcome = client::process_frame(
                &mut frame,
                &mut rt.state,
                &cache,
                &mut accumulator,
                &self.gt,
                &self.cost,
                &sc.thresholds,
                &sc.client,
            );
            if let Some(b) = rt.baseline.as_mut() {
                b.observe(match sc.client.label_oracle {
                    LabelOracle::Predicted => outcome.predicted,
                    LabelOracle::True => label,
                });
            }
            if outcome.collected != Collected::None {
                collected += 1;
            }
            tally.record(outcome.simulated_latency, outcome.exit_layer, outcome.hit, outcome.predicted == label);
            true_labels.push(label);
            if sc.output.events {
                events.push(FrameEvent {
                    round,
                    frame_index,
                    client_id,
                    true_label: label,
                    predicted: outcome.predicted,
                    exit_layer: outcome.exit_layer,
                    latency_ms: outcome.simulated_latency,
                    hit: outcome.hit,
                    collected: outcome.collected,
                });
            }
            if sc.output.trace {
                labels.push(TraceRecord {
                    frame_index,
                    client_id: client_id as u32,
                    true_label: label as u32,
                    vectors: None,
                });
            }
        }
        let upload = client::finalize_round(&mut rt.state);
        rt.tally.merge(&tally);
        ClientRoundOutput {
            record: ClientRoundRecord {
                round,
                client_id,
                policy: rt.policy,
                metrics: tally.metrics(),
                cache_entries: reply.shipped_entries,
                active_layers,
                collected,
                label_checksum: fnv1a(true_labels),
            },
            upload,
            events,
            labels,
            messages: [RoundProtocolMessage::CacheRequest(request), RoundProtocolMessage::CacheAllocation(reply)],
        }
    }

    /// Metrics of each client over every round so far.
    pub fn client_metrics(&self) -> Vec<RunMetrics> {
        self.clients.iter().map(|c| c.tally.metrics()).collect()
    }

    /// Frame-weighted metrics over every client and round so far.
    pub fn aggregate_metrics(&self) -> RunMetrics {
        let mut total = MetricsTally::new(self.scenario.layers + 1);
        for c in &self.clients {
            total.merge(&c.tally);
        }
        total.metrics()
    }
}

/// Runs every round of `scenario`.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult> {
    let mut sim = Simulation::new(scenario.clone())?;
    let mut records = Vec::new();
    let mut events = Vec::new();
    let mut trace = scenario.output.trace.then(Trace::default);
    for _ in 0..scenario.rounds {
        let report = sim.run_round()?;
        records.extend(report.records);
        events.extend(report.events);
        if let Some(t) = trace.as_mut() {
            t.records.extend(report.labels);
        }
    }
    Ok(ScenarioResult {
        records,
        per_client: sim.client_metrics(),
        aggregate: sim.aggregate_metrics(),
        protocol: sim.protocol,
        events,
        trace,
        edge_only_latency_ms: sim.cost.block_times.iter().sum(),
        table: sim.table,
    })
}
