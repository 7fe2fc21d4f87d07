//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero when any fails.

use std::cell::Cell;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use delaysched::experiment::{recovery_index, Experiment, ExperimentConfig, RunArtifacts, TraceSource};
use delaysched::forest::{Forest, ForestConfig, Sample, TreeNode};
use delaysched::model::{InvocationId, NodeId};
use delaysched::sched::{
    differentiated_schedule, monitor_tick, Decision, EstimatorKind, MonitorResult, NodeView, Reason, SchedulerConfig,
    StrategyKind,
};

thread_local! {
    static AUDITED: Cell<(usize, bool)> = const { Cell::new((0, true)) };
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn experiment(preset: &str, strategies: Vec<SchedulerConfig>) -> Experiment {
    let mut e = ExperimentConfig::from_preset(preset).resolve().expect("preset resolves");
    e.strategies = strategies;
    e
}

fn strategy(kind: StrategyKind) -> SchedulerConfig {
    SchedulerConfig::new(kind)
}

fn oracle() -> SchedulerConfig {
    SchedulerConfig {
        estimator: EstimatorKind::Oracle,
        label: Some("differentiated-oracle".into()),
        ..SchedulerConfig::new(StrategyKind::Differentiated)
    }
}

/// Runs and records the event-log audit for criterion 9.
fn run(e: &Experiment) -> RunArtifacts {
    let art = e.run().expect("experiment runs");
    AUDITED.with(|a| {
        let (n, ok) = a.get();
        a.set((n + (e.strategies.len() * e.replications as usize), ok && art.report.meta.audit_ok));
    });
    art
}

fn mean(art: &RunArtifacts, label: &str) -> f64 {
    art.report.strategy(label).expect("strategy reported").end_to_end.mean
}

// Independent tree walk over the serialized node table.
fn walk(nodes: &[TreeNode], x: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match &nodes[i] {
            TreeNode::Leaf { value, .. } => return *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => i = if x[*feature] <= *threshold { *left } else { *right } as usize,
        }
    }
}

fn c1_forest_averaging() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 14;
    let samples: Vec<Sample> = (0..800)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..100.0)).collect();
            let y = 200.0 + 30.0 * x[0] + 5.0 * x[3] * x[7] / 10.0 + rng.random_range(0.0..50.0);
            Sample { x, y }
        })
        .collect();
    let forest = Forest::train_initial(ForestConfig::default(), samples).expect("forest trains");
    let json: serde_json::Value = serde_json::from_str(&forest.to_json().unwrap()).unwrap();
    let trees: Vec<Vec<TreeNode>> = json["trees"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| serde_json::from_value(t["nodes"].clone()).unwrap())
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..110.0)).collect();
        let brute = trees.iter().map(|t| walk(t, &x)).sum::<f64>() / trees.len() as f64;
        let got = forest.predict_raw(&x).unwrap();
        worst = worst.max((got - brute).abs() / brute.abs().max(f64::MIN_POSITIVE));
    }
    verdict(
        worst <= 1e-9 && trees.len() == 50,
        format!("{} trees, 1000 probes, max relative deviation {worst:.2e}", trees.len()),
    )
}

fn view(id: u32, free: u32, local_bytes: u64, warm: bool) -> NodeView {
    NodeView {
        id: NodeId(id),
        free_slots: free,
        running: 4 - free,
        local_bytes,
        warm,
        dep_overlap: 0.0,
    }
}

fn c2_branch_table() -> Verdict {
    let cfg = SchedulerConfig::new(StrategyKind::Differentiated);
    let mut failures = Vec::new();
    let mut cases = 0;

    // Placement step: (name, views, predictions, expected decision).
    let place = [
        (
            "no local nodes",
            vec![view(0, 4, 0, false), view(1, 4, 0, false)],
            vec![700.0, 600.0],
            Decision::Immediate {
                node: NodeId(1),
                reason: Reason::NoLocal,
            },
        ),
        (
            "900 >= 0.8 * 1000",
            vec![view(0, 4, 100, false), view(1, 4, 0, false)],
            vec![900.0, 1000.0],
            Decision::Immediate {
                node: NodeId(1),
                reason: Reason::BenefitInsufficient,
            },
        ),
        (
            "500 < 0.8 * 1000",
            vec![view(0, 0, 100, false), view(1, 4, 0, true), view(2, 4, 0, false)],
            vec![600.0, 500.0, 1000.0],
            Decision::Delay {
                target: Some(NodeId(1)),
                reason: Reason::DelayForLocality,
            },
        ),
        (
            "tie between local nodes goes to the lowest id",
            vec![view(0, 4, 0, false), view(1, 4, 0, true), view(2, 4, 0, true)],
            vec![1000.0, 500.0, 500.0],
            Decision::Delay {
                target: Some(NodeId(1)),
                reason: Reason::DelayForLocality,
            },
        ),
    ];
    for (name, views, t, want) in place {
        cases += 1;
        let got = differentiated_schedule(100, &views, &t, &cfg).unwrap().outcome.decision;
        if got != want {
            failures.push(format!("{name}: {got:?}"));
        }
    }

    // Monitor step after a delay toward node 0 with fallback node 1.
    let views = vec![view(0, 0, 100, false), view(1, 4, 0, false)];
    let planned = differentiated_schedule(100, &views, &[500.0, 1000.0], &cfg).unwrap();
    let mut state = planned.delay_state(InvocationId(7), 0.0, 0.0, 10_000.0, &cfg).unwrap();
    let monitor = [
        ("8000 + 500 < 9000 continues", 500.0, false, 8000.0, "continue"),
        ("target frees", 500.0, true, 8000.0, "target-available"),
        ("7000 + 2000 >= 9000 forces", 2000.0, false, 7000.0, "sla-forced-fallback"),
    ];
    for (name, now, target_free, tf, want) in monitor {
        cases += 1;
        let mut v = views.clone();
        if target_free {
            v[0].free_slots = 1;
        }
        state.next_tick = now;
        let got = match monitor_tick(&state, &v, &[500.0, tf], now, &cfg).unwrap() {
            MonitorResult::Place { reason, node, .. } => {
                let expected_node = if target_free { NodeId(0) } else { NodeId(1) };
                if node != expected_node {
                    failures.push(format!("{name}: placed on {node:?}"));
                }
                reason.tag().to_string()
            }
            MonitorResult::Continue { next_tick, .. } => {
                if next_tick != now + cfg.monitor_interval_ms {
                    failures.push(format!("{name}: next tick {next_tick}"));
                }
                "continue".to_string()
            }
        };
        if got != want {
            failures.push(format!("{name}: {got}"));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{cases} cases, every reason tag as expected")
        } else {
            failures.join("; ")
        },
    )
}

/// True when at every placement instant of `label` some node had a free slot.
fn fallback_always_free(art: &RunArtifacts, label: &str, nodes: usize, slots: u32) -> bool {
    let reps: std::collections::BTreeSet<u32> = art.records.iter().map(|r| r.replication).collect();
    reps.into_iter().all(|rep| {
        let rs: Vec<_> = art
            .records
            .iter()
            .filter(|r| r.strategy == label && r.replication == rep)
            .collect();
        rs.iter().all(|r| {
            let mut busy = vec![0u32; nodes];
            for o in &rs {
                if o.start <= r.start && r.start < o.complete {
                    busy[o.node as usize] += 1;
                }
            }
            busy.iter().any(|&b| b < slots)
        })
    })
}

fn c3_sla_guard() -> Verdict {
    let e = experiment("empirical", vec![strategy(StrategyKind::Rds), oracle()]);
    let min_theta = e.catalog.functions.values().map(|f| f.sla_theta_ms).fold(f64::INFINITY, f64::min);
    let guard_ok = e.strategies[1].beta * min_theta > e.strategies[1].monitor_interval_ms;
    let art = run(&e);
    let o = art.report.strategy("differentiated-oracle").unwrap();
    let r = art.report.strategy("rds").unwrap();
    let free = fallback_always_free(&art, "differentiated-oracle", e.cluster.nodes as usize, e.cluster.cpu_slots);
    verdict(
        guard_ok && free && o.violations == 0 && r.sla_violation_rate > 0.0,
        format!(
            "oracle differentiated {} violations / {}; RDS rate {:.3}% ({} / {}); free node at every start: {free}; beta*theta_min > interval: {guard_ok}",
            o.violations,
            o.end_to_end.count,
            100.0 * r.sla_violation_rate,
            r.violations,
            r.end_to_end.count
        ),
    )
}

fn all_four() -> Vec<SchedulerConfig> {
    StrategyKind::ALL.iter().map(|&k| strategy(k)).collect()
}

fn c4_directional() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for preset in ["video", "log"] {
        let t = Instant::now();
        let art = run(&experiment(preset, all_four()));
        let d = mean(&art, "differentiated");
        let others = ["bs", "nls", "rds"].map(|l| mean(&art, l));
        let ok = others.iter().all(|&m| d < m) && t.elapsed() < Duration::from_secs(120);
        pass &= ok;
        parts.push(format!(
            "{preset}: diff {d:.0} vs bs {:.0} nls {:.0} rds {:.0} ms ({:.1} s)",
            others[0],
            others[1],
            others[2],
            t.elapsed().as_secs_f64()
        ));
    }
    for preset in ["doc", "ml"] {
        let t = Instant::now();
        let art = run(&experiment(preset, all_four()));
        let (d, r) = (mean(&art, "differentiated"), mean(&art, "rds"));
        let gain = (r - d) / r;
        pass &= gain >= 0.30 && t.elapsed() < Duration::from_secs(120);
        parts.push(format!(
            "{preset}: diff {d:.0} vs rds {r:.0} ms, {:.1}% lower ({:.1} s)",
            100.0 * gain,
            t.elapsed().as_secs_f64()
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c5_concurrency() -> Verdict {
    let t = Instant::now();
    let means = |level: u32| {
        let mut e = experiment(
            "video",
            vec![
                strategy(StrategyKind::Bs),
                strategy(StrategyKind::Nls),
                strategy(StrategyKind::Differentiated),
            ],
        );
        if let TraceSource::Generate(w) = &mut e.source {
            // Per-stream rate such that level 5 carries the preset's load.
            w.arrival.rate_rps /= 5.0;
            w.concurrency_level = level;
        }
        let art = run(&e);
        ["bs", "nls", "differentiated"].map(|l| mean(&art, l))
    };
    let (one, five) = (means(1), means(5));
    let f: Vec<f64> = (0..3).map(|i| five[i] / one[i]).collect();
    verdict(
        f[0] > f[2] && f[1] > f[2] && t.elapsed() < Duration::from_secs(300),
        format!(
            "mean growth 1 -> 5: bs x{:.2}, nls x{:.2}, differentiated x{:.2} ({:.1} s)",
            f[0],
            f[1],
            f[2],
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c6_recovery() -> Verdict {
    let t = Instant::now();
    let e = experiment("recovery", vec![strategy(StrategyKind::Differentiated)]);
    let art = run(&e);
    let p = art.report.predictor("differentiated").expect("predictor report");
    let curve = &p.recovery["image-resize"];
    let idx = recovery_index(curve, 0.10);
    let head: Vec<String> = curve.iter().take(12).map(|e| format!("{e:.2}")).collect();
    verdict(
        idx.is_some_and(|i| i < 30) && t.elapsed() < Duration::from_secs(60),
        format!(
            "unseen image-resize: rolling error below 10% at observation {} (curve {} ...) ({:.1} s)",
            idx.map_or("never".to_string(), |i| (i + 1).to_string()),
            head.join(" "),
            t.elapsed().as_secs_f64()
        ),
    )
}

fn digest(art: &RunArtifacts) -> (String, String) {
    let mut csv = Vec::new();
    delaysched::sched::DecisionLog {
        records: art.decisions.clone(),
    }
    .write_csv(&mut csv)
    .unwrap();
    (art.report.digest(), hex::encode(Sha256::digest(&csv)))
}

fn c7_determinism() -> Verdict {
    let t = Instant::now();
    let mut e = experiment("doc", all_four());
    e.strategies.push(oracle());
    e.replications = 2;
    let (a, b) = (digest(&run(&e)), digest(&run(&e)));
    verdict(
        a == b && t.elapsed() < Duration::from_secs(60),
        format!(
            "report {} / decisions {} identical across two runs ({:.1} s)",
            &a.0[..12],
            &a.1[..12],
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c8_overhead() -> Verdict {
    let cfg = SchedulerConfig::new(StrategyKind::Differentiated);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 20_000;
    let inputs: Vec<(Vec<NodeView>, Vec<f64>)> = (0..n)
        .map(|_| {
            let views: Vec<NodeView> = (0..10)
                .map(|i| NodeView {
                    id: NodeId(i),
                    free_slots: rng.random_range(0..=4),
                    running: 0,
                    local_bytes: if rng.random_bool(0.3) { rng.random_range(1..1000) } else { 0 },
                    warm: rng.random_bool(0.3),
                    dep_overlap: rng.random_range(0.0..1.0),
                })
                .collect();
            let t: Vec<f64> = (0..10).map(|_| rng.random_range(100.0..5000.0)).collect();
            (views, t)
        })
        .collect();
    let mut times: Vec<f64> = Vec::with_capacity(n);
    for (views, t) in &inputs {
        let start = Instant::now();
        let p = differentiated_schedule(1000, views, t, &cfg).unwrap();
        if let Some(s) = p.delay_state(InvocationId(0), 0.0, 0.0, 10_000.0, &cfg) {
            std::hint::black_box(monitor_tick(&s, views, t, 50.0, &cfg).unwrap());
        }
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / n as f64;
    let p99 = times[(0.99 * n as f64) as usize];
    verdict(
        mean < 1.0 && p99 < 1.0,
        format!(
            "{n} decisions at 10 nodes: mean {:.2} us, p99 {:.2} us, max {:.2} us",
            mean * 1e3,
            p99 * 1e3,
            times[n - 1] * 1e3
        ),
    )
}

fn c9_audit() -> Verdict {
    let (runs, ok) = AUDITED.with(Cell::get);
    verdict(
        ok && runs > 0,
        format!("{runs} engine runs audited: arrivals == completions and occupancy <= cpu_slots: {ok}"),
    )
}

fn main() {
    // (name, check, runtime budget in seconds)
    let criteria: [(&str, fn() -> Verdict, u64); 9] = [
        ("forest averaging is exact", c1_forest_averaging, 5),
        ("delay decision branch table", c2_branch_table, 1),
        ("SLA guard with oracle estimates", c3_sla_guard, 60),
        ("mean latency ordering per preset", c4_directional, 480),
        ("concurrency degradation", c5_concurrency, 300),
        ("predictor recovery on unseen function", c6_recovery, 60),
        ("determinism", c7_determinism, 60),
        ("decision overhead", c8_overhead, 60),
        ("event-log audit", c9_audit, 1),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        let in_time = t.elapsed() < Duration::from_secs(*budget);
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {} {}: {} [{:.2} s of {budget} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            name,
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
