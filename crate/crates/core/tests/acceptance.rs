//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use coca_core::cachemath::AccumulatorState;
use coca_core::client::{collect_update, finalize_round, Collected, InferenceOutcome};
use coca_core::cost::calibrate_default_costs;
use coca_core::engine::output::write_metrics_csv;
use coca_core::server::{aca_allocate, gcu_apply, AcaInput, AcaParams};
use coca_core::workload::{emit_sample, GeometryConfig, GroundTruth};
use coca_core::{
    run_scenario, AllocationMatrix, ClientParams, ClientState, GlobalCacheTable, RunMetrics, Scenario, SemanticVector,
    UploadPayload,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEEDS: u64 = 10;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn scenario(pairs: &[(&str, String)]) -> Scenario {
    Scenario::from_pairs(pairs.iter().map(|(k, v)| (*k, v.as_str()))).expect("valid scenario")
}

/// Aggregate metrics for every seed (outer) and every variant (inner).
fn sweep(base: &[(&str, &str)], key: &str, values: &[&str]) -> Vec<Vec<RunMetrics>> {
    (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            values
                .iter()
                .map(|v| {
                    let mut pairs: Vec<(&str, String)> = base.iter().map(|(k, v)| (*k, v.to_string())).collect();
                    pairs.push(("seed", seed.to_string()));
                    pairs.push(("workers", "1".into()));
                    pairs.push((key, v.to_string()));
                    run_scenario(&scenario(&pairs)).expect("run").aggregate
                })
                .collect()
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> SemanticVector {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(v) = SemanticVector::normalized(raw) {
            return v;
        }
    }
}

fn c1_recurrence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let alpha = 0.5;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=40);
        let sims: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut acc = AccumulatorState::new([0]);
        for &c in &sims {
            acc.fold_slot(0, c, alpha);
        }
        let closed: f64 = sims.iter().enumerate().map(|(k, c)| alpha.powi((m - 1 - k) as i32) * c).sum();
        worst = worst.max((acc.values()[0] - closed).abs());
    }
    outcome(worst <= 1e-9, format!("max abs error {worst:.3e}"))
}

fn c2_unit_norm() -> Outcome {
    let cfg = GeometryConfig { classes: 10, layers: 4, dim: 16, ..GeometryConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gt = GroundTruth::generate(&cfg, &mut rng).unwrap();
    let cost = calibrate_default_costs(cfg.layers, cfg.classes).unwrap();
    let params = ClientParams::default();
    let mut table = GlobalCacheTable::new(cfg.classes, cfg.layers, cfg.dim);
    for i in 0..cfg.classes {
        for j in 0..cfg.layers {
            if rng.random_bool(0.7) {
                table.set_entry(i, j, Some(gt.centroid(i, j).clone())).unwrap();
            }
        }
    }
    let mut state = ClientState::new(0, cfg.classes, &cost);
    let mut worst: f64 = 0.0;
    let mut frame = 0u64;
    for _ in 0..100 {
        for _ in 0..rng.random_range(1..40) {
            let label = rng.random_range(0..cfg.classes);
            let mut s = emit_sample(&gt, label, frame, &mut rng);
            frame += 1;
            let collected = match rng.random_range(0..3) {
                0 => Collected::None,
                1 => Collected::HitSample,
                _ => Collected::MissSample,
            };
            let out = InferenceOutcome {
                predicted: label,
                exit_layer: rng.random_range(0..cfg.layers),
                simulated_latency: 0.0,
                hit: collected == Collected::HitSample,
                score: None,
                collected,
            };
            state.observe(label);
            collect_update(&mut state, &out, &mut s, &params);
        }
        let payload = finalize_round(&mut state);
        for (_, _, v) in &payload.touched {
            worst = worst.max((v.norm() - 1.0).abs());
        }
        gcu_apply(&mut table, &payload, 0.99).unwrap();
        for (_, _, v) in table.iter_present() {
            worst = worst.max((v.norm() - 1.0).abs());
        }
    }
    outcome(worst <= 1e-6, format!("max |norm - 1| {worst:.3e}"))
}

fn c3_gcu_identity() -> Outcome {
    let (classes, layers, dim) = (8, 3, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let mut table = GlobalCacheTable::new(classes, layers, dim);
        for i in 0..classes {
            for j in 0..layers {
                table.set_entry(i, j, Some(random_unit(&mut rng, dim))).unwrap();
            }
        }
        table.add_frequencies(&(0..classes).map(|_| rng.random_range(1..500)).collect::<Vec<_>>());
        let phi: Vec<u64> =
            (0..classes).map(|_| if rng.random_bool(0.5) { 0 } else { rng.random_range(1..50) }).collect();
        let touched = (0..classes)
            .flat_map(|i| (0..layers).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, random_unit(&mut rng, dim)))
            .collect();
        let payload = UploadPayload { client_id: 0, touched, phi: phi.clone(), hit_ratio: vec![], saved_time: vec![] };
        let before = table.clone();
        gcu_apply(&mut table, &payload, 0.99).unwrap();
        for i in (0..classes).filter(|&i| phi[i] == 0) {
            for j in 0..layers {
                let (a, b) = (before.entry(i, j).unwrap(), table.entry(i, j).unwrap());
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-9, format!("max deviation {worst:.3e}"))
}

fn c4_aca_constraints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let params = AcaParams::default();
    let mut failures = Vec::new();
    for case in 0..500 {
        let classes = rng.random_range(1..60);
        let layers = rng.random_range(1..20);
        let phi: Vec<u64> = (0..classes).map(|_| rng.random_range(0..1000)).collect();
        let tau: Vec<u64> = (0..classes).map(|_| rng.random_range(0..3000)).collect();
        let hit: Vec<f64> = (0..=layers).map(|_| rng.random_range(0.0..1.0)).collect();
        let saved: Vec<f64> = (0..=layers).map(|_| rng.random_range(0.0..100.0)).collect();
        let entry_bytes = vec![4 * rng.random_range(1..128u64); layers];
        let budget = rng.random_range(0..entry_bytes[0] * classes as u64 * layers as u64 + 1);
        let input = AcaInput {
            global_freq: &phi,
            tau: &tau,
            hit_ratio: &hit,
            saved_time: &saved,
            budget_bytes: budget,
            entry_bytes: &entry_bytes,
        };
        let r = aca_allocate(&input, &params).unwrap();
        let bytes: u64 = r.allocation.iter_set().map(|(_, j)| entry_bytes[j]).sum();
        let total: f64 = r.scores.iter().sum();
        let covered: f64 = r.hot_classes.iter().map(|&i| r.scores[i]).sum();
        if bytes > budget
            || (total > 0.0 && covered < 0.95 * total)
            || !r.allocation.is_rectangular()
            || r.selected_layers.len() > layers
        {
            failures.push(case);
        }
    }
    outcome(failures.is_empty(), format!("500 instances, {} violations", failures.len()))
}

fn c5_aca_hand_trace() -> Outcome {
    // Φ = (100, 100, 1), τ = 0: scores equal Φ, total 201, 95% target 190.95.
    // Sorted: class 0 (100, cumulative 100), class 1 (cumulative 200 ≥ 190.95):
    // hot set {0, 1}. A layer of two 256-byte entries costs 512.
    // ζ = Υ·R = (10, 10/3): layer 0 first; M = 512 < 768, allocate.
    // R_1 ← max(0, 1/3 − 1/3) = 0, so layer 1 has ζ = 0 and the loop ends.
    let third = 1.0 / 3.0;
    let input = AcaInput {
        global_freq: &[100, 100, 1],
        tau: &[0, 0, 0],
        hit_ratio: &[third, third, third],
        saved_time: &[30.0, 10.0, 0.0],
        budget_bytes: 768,
        entry_bytes: &[256, 256],
    };
    let r = aca_allocate(&input, &AcaParams::default()).unwrap();
    let mut expected = AllocationMatrix::empty(3, 2);
    expected.set(0, 0, true);
    expected.set(1, 0, true);
    let pass = r.allocation == expected
        && r.hot_classes == [0, 1]
        && r.selected_layers == [0]
        && r.allocated_bytes == 512
        && r.residual_hit_ratio[1] == 0.0;
    outcome(pass, format!("hot {:?}, layers {:?}, bytes {}", r.hot_classes, r.selected_layers, r.allocated_bytes))
}

fn c6_u_curve() -> Outcome {
    let fractions = [0.025, 0.05, 0.10, 0.25, 0.50, 1.0];
    let layers = 34;
    let counts: Vec<String> =
        fractions.iter().map(|f: &f64| ((f * layers as f64).round() as usize).max(1).to_string()).collect();
    let values: Vec<&str> = counts.iter().map(String::as_str).collect();
    let base = [("layers", "34"), ("classes", "50"), ("allocator.policy", "fixed_all"), ("rounds", "5")];
    let rows = sweep(&base, "allocator.fixed_layer_count", &values);
    let mean: Vec<f64> = (0..fractions.len())
        .map(|v| rows.iter().map(|r| r[v].average_latency_ms).sum::<f64>() / SEEDS as f64)
        .collect();
    let edge_only = calibrate_default_costs(layers, 50).unwrap().total_compute();
    let (argmin, min) = mean.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let last = mean.len() - 1;
    let pass = argmin != 0 && argmin != last && min < mean[0] && min < mean[last] && min <= 0.85 * edge_only;
    let curve: Vec<String> = mean.iter().map(|m| format!("{m:.2}")).collect();
    outcome(
        pass,
        format!(
            "latency [{}] vs edge-only {edge_only:.2}; minimum {:.1}% below",
            curve.join(", "),
            100.0 * (1.0 - min / edge_only)
        ),
    )
}

fn count_wins(rows: &[Vec<RunMetrics>], better: impl Fn(&RunMetrics, &RunMetrics) -> bool) -> usize {
    rows.iter().filter(|r| better(&r[0], &r[1])).count()
}

fn c7_long_tail() -> Outcome {
    let rows = sweep(&[], "workload.rho", &["90", "1"]);
    let frames_equal = rows.iter().all(|r| r[0].frames == r[1].frames);
    let wins = count_wins(&rows, |a, b| a.average_latency_ms < b.average_latency_ms);
    outcome(wins >= 8 && frames_equal, format!("long tail faster in {wins}/{SEEDS}"))
}

fn c8_non_iid() -> Outcome {
    let rows = sweep(&[], "workload.p", &["10", "0"]);
    let wins = count_wins(&rows, |a, b| a.average_latency_ms < b.average_latency_ms);
    outcome(wins >= 8, format!("p = 10 faster in {wins}/{SEEDS}"))
}

fn c9_theta() -> Outcome {
    // The allocation is held fixed so that Θ is the only thing that varies.
    let rows = sweep(&[("server.dca", "false")], "thresholds.theta", &["0.008", "0.012", "0.016"]);
    let ok = rows
        .iter()
        .filter(|r| r.windows(2).all(|w| w[1].hit_ratio <= w[0].hit_ratio && w[1].hit_accuracy >= w[0].hit_accuracy))
        .count();
    outcome(ok >= 9, format!("monotone in {ok}/{SEEDS} seeds"))
}

fn c10_calibration() -> Outcome {
    let cost = calibrate_default_costs(34, 50).unwrap();
    let lookup: f64 = cost.lookup_costs(&AllocationMatrix::full(50, 34)).iter().sum();
    let ratio = lookup / cost.total_compute();
    outcome((ratio - 0.5622).abs() <= 1e-6, format!("ratio {ratio:.9}"))
}

fn c11_baselines() -> Outcome {
    let rows = sweep(
        &[("workload.rho", "90"), ("allocator.capacity", "30")],
        "allocator.policy",
        &["aca", "lru", "fifo", "rand"],
    );
    let wins: Vec<usize> =
        (1..4).map(|b| rows.iter().filter(|r| r[0].average_latency_ms <= r[b].average_latency_ms).count()).collect();
    outcome(
        wins.iter().all(|&w| w >= 8),
        format!("ACA at most LRU {}/{SEEDS}, FIFO {}/{SEEDS}, RAND {}/{SEEDS}", wins[0], wins[1], wins[2]),
    )
}

fn c12_gcu_drift() -> Outcome {
    let rows = sweep(&[("workload.drift", "0.02"), ("rounds", "50")], "server.gcu", &["true", "false"]);
    let wins = count_wins(&rows, |a, b| a.overall_accuracy >= b.overall_accuracy);
    let mean = |v: usize| rows.iter().map(|r| r[v].overall_accuracy).sum::<f64>() / SEEDS as f64;
    outcome(wins >= 8, format!("GCU accuracy at least no-GCU in {wins}/{SEEDS} ({:.4} vs {:.4})", mean(0), mean(1)))
}

fn c13_edge_only() -> Outcome {
    let base = [("output.events", "true".to_string()), ("rounds", "3".to_string()), ("workload.rho", "90".to_string())];
    let run = |extra: (&str, &str)| {
        let mut pairs = base.to_vec();
        pairs.push((extra.0, extra.1.to_string()));
        run_scenario(&scenario(&pairs)).unwrap()
    };
    let reference = run(("allocator.policy", "edge_only"));
    let variants = [run(("thresholds.theta", "inf")), run(("allocator.budget_bytes", "0"))];
    let total = reference.edge_only_latency_ms;
    let mut pass = reference.events.iter().all(|e| e.latency_ms == total && !e.hit);
    for v in &variants {
        pass &= v.events.len() == reference.events.len();
        pass &= v.events.iter().zip(&reference.events).all(|(a, b)| {
            a.predicted == b.predicted && a.true_label == b.true_label && a.latency_ms == total && !a.hit
        });
    }
    outcome(pass, format!("{} frames per run, latency {total}", reference.events.len()))
}

fn c14_determinism() -> Outcome {
    let csv = |workers: &str| {
        let pairs = [
            ("workers", workers.to_string()),
            ("clients", "6".to_string()),
            ("workload.drift", "0.02".to_string()),
            ("workload.p", "10".to_string()),
            ("allocator.policy", "aca,lru,fifo,rand,fixed_all,edge_only".to_string()),
            ("seed", "77".to_string()),
        ];
        let r = run_scenario(&scenario(&pairs)).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&r.records, &mut buf).unwrap();
        buf
    };
    let a = csv("1");
    let b = csv("1");
    let c = csv("4");
    outcome(a == b && a == c, format!("{} bytes, workers 1/1/4", a.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 14] = [
        ("recurrence closed form", c1_recurrence),
        ("unit norm", c2_unit_norm),
        ("GCU identity", c3_gcu_identity),
        ("ACA constraints", c4_aca_constraints),
        ("ACA hand trace", c5_aca_hand_trace),
        ("cache-size U-curve", c6_u_curve),
        ("long-tail benefit", c7_long_tail),
        ("non-IID benefit", c8_non_iid),
        ("threshold monotonicity", c9_theta),
        ("cost calibration", c10_calibration),
        ("ACA vs baselines", c11_baselines),
        ("GCU under drift", c12_gcu_drift),
        ("Edge-Only equivalence", c13_edge_only),
        ("determinism", c14_determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let verdict = if o.pass && secs <= 60.0 { "PASS" } else { "FAIL" };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} criterion {:>2} {name}: {} [{secs:.1}s]", n + 1, o.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
