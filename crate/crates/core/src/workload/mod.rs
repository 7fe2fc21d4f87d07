//! Synthetic invocation streams.
//!
//! Root arrivals come from `concurrency_level` independent streams, each
//! with its own RNG stream, so level 3 contains the level-1 stream plus two
//! more. Every invocation of a workflow instance is materialized up front,
//! including its compute-time draw and the sizes of the objects it exchanges;
//! only the release time of dependent stages is left to the simulator.

mod presets;

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Zipf};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    Catalog, CatalogError, ComputeDist, DataId, DataRef, FunctionId, FunctionSpec, Invocation,
    InvocationId, Millis, Origin, SizeDist, WorkflowId,
};

pub use presets::{preset, scenario_presets, Scenario};

pub const MIN_RATE_RPS: f64 = 0.1;
pub const MAX_RATE_RPS: f64 = 50.0;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("arrival rate {0} rps outside [0.1, 50]")]
    Rate(f64),
    #[error("concurrency level must be at least 1")]
    Concurrency,
    #[error("workload lists no applications")]
    NoApps,
    #[error("unknown workflow {0}")]
    UnknownWorkflow(WorkflowId),
    #[error("unknown function {0}")]
    UnknownFunction(FunctionId),
    #[error("invalid distribution parameters: {0}")]
    Distribution(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("trace: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    Poisson,
    /// Inter-arrival gaps resampled from `samples_ms`, rescaled to `rate_rps`.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    pub kind: ArrivalKind,
    pub rate_rps: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples_ms: Vec<f64>,
}

impl ArrivalProcess {
    pub fn poisson(rate_rps: f64) -> Self {
        ArrivalProcess {
            kind: ArrivalKind::Poisson,
            rate_rps,
            samples_ms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppMix {
    pub workflow: WorkflowId,
    /// The application is only chosen for arrivals at or after this time.
    #[serde(default)]
    pub available_from_ms: Millis,
}

impl AppMix {
    pub fn new(workflow: &str) -> Self {
        AppMix {
            workflow: workflow.into(),
            available_from_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub duration_ms: Millis,
    pub arrival: ArrivalProcess,
    /// Zipf exponent over `apps` in listed order (rank 1 first).
    #[serde(default)]
    pub popularity_exponent: f64,
    pub apps: Vec<AppMix>,
    #[serde(default = "one")]
    pub concurrency_level: u32,
    /// Generate exactly this many instances of every app, in shuffled order,
    /// instead of drawing apps by popularity until `duration_ms`.
    #[serde(default)]
    pub executions_per_app: Option<u32>,
    /// Compute draws are capped at `mean * (1 + compute_cap_cvs * cv)`.
    #[serde(default = "default_cap")]
    pub compute_cap_cvs: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> u32 {
    1
}

fn default_cap() -> f64 {
    4.0
}

impl WorkloadConfig {
    pub fn validate(&self, catalog: &Catalog) -> Result<(), WorkloadError> {
        let r = self.arrival.rate_rps;
        if !(MIN_RATE_RPS..=MAX_RATE_RPS).contains(&r) {
            return Err(WorkloadError::Rate(r));
        }
        if self.concurrency_level == 0 {
            return Err(WorkloadError::Concurrency);
        }
        if self.apps.is_empty() {
            return Err(WorkloadError::NoApps);
        }
        if !(self.duration_ms.is_finite() && self.duration_ms >= 0.0) {
            return Err(WorkloadError::Distribution("duration_ms".into()));
        }
        if !(self.popularity_exponent.is_finite() && self.popularity_exponent >= 0.0) {
            return Err(WorkloadError::Distribution("popularity_exponent".into()));
        }
        if !(self.compute_cap_cvs > 0.0) {
            return Err(WorkloadError::Distribution("compute_cap_cvs".into()));
        }
        if self.arrival.kind == ArrivalKind::Empirical
            && (self.arrival.samples_ms.is_empty()
                || self.arrival.samples_ms.iter().any(|g| !(*g > 0.0)))
        {
            return Err(WorkloadError::Distribution(
                "empirical gaps must be positive".into(),
            ));
        }
        catalog.validate()?;
        for a in &self.apps {
            if catalog.workflow(&a.workflow).is_none() {
                return Err(WorkloadError::UnknownWorkflow(a.workflow.clone()));
            }
        }
        Ok(())
    }
}

/// One invocation of a generated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Root arrival time of the workflow instance.
    pub arrival_ms: Millis,
    pub instance: u64,
    pub workflow: WorkflowId,
    pub stage: usize,
    /// Dependent stages wait for their predecessors at run time; the
    /// invocation's arrival and deadline are then reset to the release time.
    pub gated: bool,
    pub invocation: Invocation,
    /// Objects this invocation writes on completion.
    pub outputs: Vec<(DataId, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn roots(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| !e.gated)
    }

    pub fn instances(&self) -> usize {
        self.roots()
            .map(|e| e.instance)
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Self> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(io::Error::other)?);
        }
        Ok(Trace { events })
    }

    /// SHA-256 of the JSONL encoding.
    pub fn hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

pub fn sample_size<R: Rng>(d: &SizeDist, rng: &mut R) -> Result<u64, WorkloadError> {
    if d.median_bytes <= 0.0 {
        return Ok(0);
    }
    let v = if d.sigma == 0.0 {
        d.median_bytes
    } else {
        LogNormal::new(d.median_bytes.ln(), d.sigma)
            .map_err(|e| WorkloadError::Distribution(e.to_string()))?
            .sample(rng)
    };
    Ok(v.min(d.max_bytes).max(0.0) as u64)
}

pub fn sample_compute<R: Rng>(
    d: &ComputeDist,
    cap_cvs: f64,
    rng: &mut R,
) -> Result<Millis, WorkloadError> {
    if d.cv == 0.0 {
        return Ok(d.mean_ms);
    }
    let shape = 1.0 / (d.cv * d.cv);
    let g = Gamma::new(shape, d.mean_ms / shape)
        .map_err(|e| WorkloadError::Distribution(e.to_string()))?;
    Ok(g.sample(rng).min(d.mean_ms * (1.0 + cap_cvs * d.cv)))
}

/// Root arrival in one stream, before instance ids are assigned.
struct Root {
    time: Millis,
    stream: u32,
    seq: u64,
    app: usize,
    input: u64,
    /// compute draws per stage, per instance
    draws: Vec<Vec<Millis>>,
}

fn stream_rng(seed: u64, stream: u32) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

fn next_gap<R: Rng>(p: &ArrivalProcess, rng: &mut R) -> Result<Millis, WorkloadError> {
    match p.kind {
        ArrivalKind::Poisson => {
            let e = Exp::new(p.rate_rps).map_err(|e| WorkloadError::Distribution(e.to_string()))?;
            Ok(e.sample(rng) * 1000.0)
        }
        ArrivalKind::Empirical => {
            let mean = p.samples_ms.iter().sum::<f64>() / p.samples_ms.len() as f64;
            let g = p.samples_ms[rng.random_range(0..p.samples_ms.len())];
            Ok(g * (1000.0 / p.rate_rps) / mean)
        }
    }
}

fn draw_instance<R: Rng>(
    cfg: &WorkloadConfig,
    catalog: &Catalog,
    app: usize,
    rng: &mut R,
) -> Result<(u64, Vec<Vec<Millis>>), WorkloadError> {
    let wf = catalog
        .workflow(&cfg.apps[app].workflow)
        .ok_or_else(|| WorkloadError::UnknownWorkflow(cfg.apps[app].workflow.clone()))?;
    let root_fn = fn_spec(catalog, &wf.stages[0].function)?;
    let input = sample_size(&root_fn.input_size, rng)?;
    let mut draws = Vec::with_capacity(wf.stages.len());
    for st in &wf.stages {
        let f = fn_spec(catalog, &st.function)?;
        draws.push(
            (0..st.fan_out)
                .map(|_| sample_compute(&f.base_compute, cfg.compute_cap_cvs, rng))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok((input, draws))
}

fn fn_spec<'a>(catalog: &'a Catalog, id: &FunctionId) -> Result<&'a FunctionSpec, WorkloadError> {
    catalog
        .function(id)
        .ok_or_else(|| WorkloadError::UnknownFunction(id.clone()))
}

fn pick_app<R: Rng>(
    cfg: &WorkloadConfig,
    zipf: &Zipf<f64>,
    t: Millis,
    rng: &mut R,
) -> Option<usize> {
    let eligible: Vec<usize> = (0..cfg.apps.len())
        .filter(|&i| cfg.apps[i].available_from_ms <= t)
        .collect();
    if eligible.is_empty() {
        // consume the same randomness either way
        let _ = zipf.sample(rng);
        return None;
    }
    let k = zipf.sample(rng) as usize;
    let rank = k.clamp(1, cfg.apps.len()) - 1;
    // ranks beyond the eligible set fold back onto it
    Some(eligible[rank % eligible.len()])
}

/// Generates a trace. Deterministic in `cfg.seed`.
pub fn generate(cfg: &WorkloadConfig, catalog: &Catalog) -> Result<Trace, WorkloadError> {
    cfg.validate(catalog)?;
    let zipf = Zipf::new(cfg.apps.len() as f64, cfg.popularity_exponent)
        .map_err(|e| WorkloadError::Distribution(e.to_string()))?;

    let mut roots: Vec<Root> = Vec::new();
    match cfg.executions_per_app {
        None => {
            for stream in 0..cfg.concurrency_level {
                let mut rng = stream_rng(cfg.seed, stream);
                let mut t = 0.0;
                let mut seq = 0;
                loop {
                    t += next_gap(&cfg.arrival, &mut rng)?;
                    if t > cfg.duration_ms {
                        break;
                    }
                    let Some(app) = pick_app(cfg, &zipf, t, &mut rng) else {
                        continue;
                    };
                    let (input, draws) = draw_instance(cfg, catalog, app, &mut rng)?;
                    roots.push(Root {
                        time: t,
                        stream,
                        seq,
                        app,
                        input,
                        draws,
                    });
                    seq += 1;
                }
            }
        }
        Some(per_app) => {
            for stream in 0..cfg.concurrency_level {
                let mut rng = stream_rng(cfg.seed, stream);
                let mut order: Vec<usize> = (0..cfg.apps.len())
                    .flat_map(|a| std::iter::repeat_n(a, per_app as usize))
                    .collect();
                order.shuffle(&mut rng);
                let mut t = 0.0;
                for (seq, app) in order.into_iter().enumerate() {
                    t += next_gap(&cfg.arrival, &mut rng)?;
                    let (input, draws) = draw_instance(cfg, catalog, app, &mut rng)?;
                    roots.push(Root {
                        time: t,
                        stream,
                        seq: seq as u64,
                        app,
                        input,
                        draws,
                    });
                }
            }
        }
    }
    roots.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.stream.cmp(&b.stream))
            .then(a.seq.cmp(&b.seq))
    });

    let mut b = Builder::default();
    for (instance, root) in roots.into_iter().enumerate() {
        b.materialize(cfg, catalog, instance as u64, root)?;
    }
    Ok(Trace { events: b.events })
}

#[derive(Default)]
struct Builder {
    events: Vec<TraceEvent>,
    next_inv: u64,
    next_data: u64,
}

impl Builder {
    fn data_id(&mut self) -> DataId {
        self.next_data += 1;
        DataId(self.next_data)
    }

    fn materialize(
        &mut self,
        cfg: &WorkloadConfig,
        catalog: &Catalog,
        instance: u64,
        root: Root,
    ) -> Result<(), WorkloadError> {
        let wf = catalog
            .workflow(&cfg.apps[root.app].workflow)
            .ok_or_else(|| WorkloadError::UnknownWorkflow(cfg.apps[root.app].workflow.clone()))?;
        let n = wf.stages.len();
        // inputs[stage][index]: objects flowing into that invocation
        let mut inputs: Vec<Vec<Vec<DataRef>>> = wf
            .stages
            .iter()
            .map(|s| vec![Vec::new(); s.fan_out as usize])
            .collect();
        let root_fan = wf.stages[0].fan_out as u64;
        for i in 0..root_fan as usize {
            let data = self.data_id();
            inputs[0][i].push(DataRef {
                data,
                size: root.input / root_fan,
                producer: None,
            });
        }
        for s in 0..n {
            let st = &wf.stages[s];
            let spec = fn_spec(catalog, &st.function)?;
            let succ: Vec<usize> = wf.successors(s).collect();
            let consumers: u64 = succ.iter().map(|&t| wf.stages[t].fan_out as u64).sum();
            for i in 0..st.fan_out as usize {
                let refs = std::mem::take(&mut inputs[s][i]);
                let input_total: u64 = refs.iter().map(|d| d.size).sum();
                let mut outputs = Vec::new();
                if consumers > 0 {
                    let each = ((input_total as f64 * st.output_ratio) / consumers as f64) as u64;
                    for &t in &succ {
                        for j in 0..wf.stages[t].fan_out as usize {
                            let data = self.data_id();
                            outputs.push((data, each));
                            inputs[t][j].push(DataRef {
                                data,
                                size: each,
                                producer: None,
                            });
                        }
                    }
                }
                let id = InvocationId(self.next_inv);
                self.next_inv += 1;
                let inv = Invocation::new(id, spec, root.time, input_total, refs, root.draws[s][i])
                    .with_origin(Origin {
                        instance,
                        workflow: wf.id.clone(),
                        stage: s,
                        index: i as u32,
                    });
                self.events.push(TraceEvent {
                    arrival_ms: root.time,
                    instance,
                    workflow: wf.id.clone(),
                    stage: s,
                    gated: !st.predecessors.is_empty(),
                    invocation: inv,
                    outputs,
                });
            }
        }
        Ok(())
    }
}
