//! Browser front end. Every export takes plain numbers or a JSON string and
//! returns JSON, so the page needs no bindings beyond strings.

use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

use delaysched::experiment::{recovery_index, Experiment, ExperimentConfig, TraceSource};
use delaysched::model::NodeId;
use delaysched::sched::{
    differentiated_schedule, Decision, NodeView, SchedulerConfig, StrategyKind,
};
use delaysched::workload::scenario_presets;

/// Warm-up length used in the browser; the CLI default is four times longer.
const WEB_WARMUP_MS: f64 = 120_000.0;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn experiment(preset: &str, seed: u64, duration_s: f64) -> Result<Experiment, String> {
    let mut c = ExperimentConfig::from_preset(preset);
    c.replications = 1;
    c.seed = Some(seed);
    c.warmup_duration_ms = Some(WEB_WARMUP_MS);
    let mut e = c.resolve().map_err(err)?;
    if let TraceSource::Generate(w) = &mut e.source {
        if duration_s > 0.0 {
            w.duration_ms = duration_s * 1000.0;
        }
    }
    Ok(e)
}

pub fn presets_json() -> String {
    let list: Vec<_> = scenario_presets()
        .into_iter()
        .map(|s| json!({ "name": s.name, "description": s.description }))
        .collect();
    json!(list).to_string()
}

/// Runs the four strategies over one trace of `preset`. `alpha` and `beta`
/// apply to the differentiated scheduler. There are `concurrency` arrival
/// streams, each at a fifth of the preset's rate, so concurrency 5 carries
/// the preset's load.
pub fn compare_json(
    preset: &str,
    seed: u64,
    alpha: f64,
    beta: f64,
    concurrency: u32,
    duration_s: f64,
) -> Result<String, String> {
    let mut e = experiment(preset, seed, duration_s)?;
    if let TraceSource::Generate(w) = &mut e.source {
        w.concurrency_level = concurrency;
        w.arrival.rate_rps /= 5.0;
        w.validate(&e.catalog).map_err(err)?;
    }
    e.strategies = StrategyKind::ALL
        .iter()
        .map(|&k| SchedulerConfig {
            alpha,
            beta,
            ..SchedulerConfig::new(k)
        })
        .collect();
    for s in &e.strategies {
        s.validate().map_err(err)?;
    }
    let art = e.run().map_err(err)?;
    Ok(json!({
        "invocations": art.records.len() / e.strategies.len(),
        "audit_ok": art.report.meta.audit_ok,
        "strategies": art.report.strategies,
    })
    .to_string())
}

#[derive(Debug, Deserialize)]
struct NodeInput {
    free_slots: u32,
    #[serde(default)]
    running: u32,
    #[serde(default)]
    local_bytes: u64,
    #[serde(default)]
    warm: bool,
    #[serde(default)]
    dep_overlap: f64,
    predicted_ms: f64,
}

#[derive(Debug, Deserialize)]
struct DecideInput {
    alpha: f64,
    nodes: Vec<NodeInput>,
}

#[derive(Debug, Serialize)]
struct DecideOutput {
    local: Vec<(u32, f64)>,
    fallback: Vec<u32>,
    action: &'static str,
    node: Option<u32>,
    reason: Option<String>,
    t_local: Option<f64>,
    t_fallback: Option<f64>,
}

/// One placement step of the differentiated scheduler for a hand-built
/// cluster. Predecessor bytes are the sum of the nodes' local bytes.
pub fn decide_json(input: &str) -> Result<String, String> {
    let inp: DecideInput = serde_json::from_str(input).map_err(err)?;
    let cfg = SchedulerConfig {
        alpha: inp.alpha,
        ..SchedulerConfig::default()
    };
    cfg.validate().map_err(err)?;
    let views: Vec<NodeView> = inp
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| NodeView {
            id: NodeId(i as u32),
            free_slots: n.free_slots,
            running: n.running,
            local_bytes: n.local_bytes,
            warm: n.warm,
            dep_overlap: n.dep_overlap,
        })
        .collect();
    let t: Vec<f64> = inp.nodes.iter().map(|n| n.predicted_ms).collect();
    let bytes = views.iter().map(|v| v.local_bytes).sum();
    let p = differentiated_schedule(bytes, &views, &t, &cfg).map_err(err)?;
    let (action, node, reason) = match p.outcome.decision {
        Decision::Immediate { node, reason } => ("immediate", Some(node.0), Some(reason)),
        Decision::Delay { target, reason } => ("delay", target.map(|n| n.0), Some(reason)),
        Decision::Wait => ("wait", None, None),
    };
    let out = DecideOutput {
        local: p.classification.local.iter().map(|(n, s)| (n.0, *s)).collect(),
        fallback: p.classification.fallback.iter().map(|n| n.0).collect(),
        action,
        node,
        reason: reason.map(|r| r.tag().to_string()),
        t_local: p.outcome.t_local,
        t_fallback: p.outcome.t_fallback,
    };
    serde_json::to_string(&out).map_err(err)
}

/// Rolling relative prediction error per function on the `recovery` preset,
/// with the first observation index below `threshold`.
pub fn recovery_json(seed: u64, threshold: f64) -> Result<String, String> {
    let mut e = experiment("recovery", seed, 0.0)?;
    e.strategies = vec![SchedulerConfig::new(StrategyKind::Differentiated)];
    let art = e.run().map_err(err)?;
    let p = art
        .report
        .predictor
        .first()
        .ok_or("no predictor report")?;
    let curves: Vec<_> = p
        .recovery
        .iter()
        .map(|(f, c)| json!({ "function": f, "curve": c, "recovered_at": recovery_index(c, threshold) }))
        .collect();
    Ok(json!({ "mean_relative_error": p.mean_relative_error, "functions": curves }).to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn presets() -> String {
    presets_json()
}

#[wasm_bindgen]
pub fn compare(
    preset: &str,
    seed: u32,
    alpha: f64,
    beta: f64,
    concurrency: u32,
    duration_s: f64,
) -> Result<String, JsValue> {
    js(compare_json(preset, seed.into(), alpha, beta, concurrency, duration_s))
}

#[wasm_bindgen]
pub fn decide(input: &str) -> Result<String, JsValue> {
    js(decide_json(input))
}

#[wasm_bindgen]
pub fn recovery(seed: u32, threshold: f64) -> Result<String, JsValue> {
    js(recovery_json(seed.into(), threshold))
}
