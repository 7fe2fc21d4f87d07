//! Experiment driver: config loading, replicated runs over a shared trace,
//! and report assembly.

mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::forest::{ForestError, OnlinePredictor, OnlinePredictorConfig, Sample, UpdateReport};
use crate::model::{Catalog, CatalogError, FunctionSpec, WorkflowSpec};
use crate::profiling::SampleLog;
use crate::sched::{
    DecisionLog, DecisionRecord, EstimatorKind, SchedError, SchedulerConfig, StrategyKind,
};
use crate::sim::{
    write_records_csv, ClusterConfig, Engine, EngineConfig, EngineError, Estimator, EventLog,
    InvocationRecord, RunResult,
};
use crate::workload::{generate, preset, Trace, WorkloadConfig, WorkloadError};

pub use report::{
    cdf, compare, compare_strategies, improvement, percentile, predictor_error_curves,
    recovery_index, relative_error, rolling_mean, thin_cdf, Comparison, ComparisonRow,
    LatencySummary, PredictorReport, Report, RunMeta, StrategyReport, CDF_POINTS, COMPARED_METRICS,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty sample")]
    EmptySample,
    #[error("no predictions recorded for {0}")]
    NoPredictions(String),
    #[error("no completed invocations for {0}")]
    NoRecords(String),
    #[error("reports were produced from different traces")]
    TraceMismatch,
    #[error("reports share no strategy label")]
    NoCommonStrategies,
}

/// Length of the predictor warm-up trace.
pub const DEFAULT_WARMUP_MS: f64 = 480_000.0;

/// Experiment description as read from a TOML file.
///
/// A `preset` supplies functions, workflows, workload and cluster; explicit
/// sections override it (functions and workflows by id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub cluster: Option<ClusterConfig>,
    pub functions: Vec<FunctionSpec>,
    pub workflows: Vec<WorkflowSpec>,
    pub workload: Option<WorkloadConfig>,
    /// JSONL trace to replay instead of generating one.
    pub trace: Option<PathBuf>,
    /// Empty means all four strategies with their defaults.
    pub strategies: Vec<SchedulerConfig>,
    pub predictor: OnlinePredictorConfig,
    /// Pretrain forest estimators on samples from BS and NLS runs over a
    /// separately seeded trace.
    pub warmup: bool,
    /// Warm-up trace length; unset means the workload duration.
    pub warmup_duration_ms: Option<f64>,
    pub replications: u32,
    /// Master seed; defaults to the workload seed.
    pub seed: Option<u64>,
    pub recovery_window: usize,
    pub history_alpha: f64,
    pub history_prior_ms: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: None,
            cluster: None,
            functions: Vec::new(),
            workflows: Vec::new(),
            workload: None,
            trace: None,
            strategies: Vec::new(),
            predictor: OnlinePredictorConfig::default(),
            warmup: true,
            warmup_duration_ms: Some(DEFAULT_WARMUP_MS),
            replications: 5,
            seed: None,
            recovery_window: 5,
            history_alpha: 0.3,
            history_prior_ms: 1000.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_preset(name: &str) -> Self {
        ExperimentConfig {
            preset: Some(name.to_string()),
            ..Default::default()
        }
    }

    pub fn from_toml(s: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        if let (Some(t), Some(dir)) = (&cfg.trace, path.parent()) {
            if t.is_relative() {
                cfg.trace = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    /// Validates and fills in defaults.
    pub fn resolve(&self) -> Result<Experiment, ExperimentError> {
        let base = match &self.preset {
            Some(p) => Some(preset(p).ok_or_else(|| ExperimentError::UnknownPreset(p.clone()))?),
            None => None,
        };
        let mut functions: BTreeMap<_, _> = base
            .iter()
            .flat_map(|b| b.functions.iter().cloned())
            .map(|f| (f.id.clone(), f))
            .collect();
        functions.extend(self.functions.iter().cloned().map(|f| (f.id.clone(), f)));
        let mut workflows: BTreeMap<_, _> = base
            .iter()
            .flat_map(|b| b.workflows.iter().cloned())
            .map(|w| (w.id.clone(), w))
            .collect();
        workflows.extend(self.workflows.iter().cloned().map(|w| (w.id.clone(), w)));
        let catalog = Catalog::new(
            functions.into_values().collect(),
            workflows.into_values().collect(),
        );
        catalog.validate()?;

        let cluster = self
            .cluster
            .clone()
            .or_else(|| base.as_ref().map(|b| b.cluster.clone()))
            .unwrap_or_default();
        if cluster.nodes == 0 {
            return Err(ExperimentError::Config(
                "cluster.nodes must be at least 1".into(),
            ));
        }
        if cluster.cpu_slots == 0 {
            return Err(ExperimentError::Config(
                "cluster.cpu_slots must be at least 1".into(),
            ));
        }
        if self.replications == 0 {
            return Err(ExperimentError::Config(
                "replications must be at least 1".into(),
            ));
        }

        let source = match (&self.trace, &self.workload) {
            (Some(path), _) => {
                let trace = Trace::read_jsonl(std::io::BufReader::new(fs::File::open(path)?))?;
                for e in &trace.events {
                    if catalog.function(&e.invocation.function).is_none() {
                        return Err(ExperimentError::Config(format!(
                            "trace names unknown function {}",
                            e.invocation.function
                        )));
                    }
                }
                TraceSource::File(trace)
            }
            (None, Some(w)) => TraceSource::Generate(w.clone()),
            (None, None) => match &base {
                Some(b) => TraceSource::Generate(b.workload.clone()),
                None => {
                    return Err(ExperimentError::Config(
                        "no workload, trace or preset given".into(),
                    ))
                }
            },
        };
        if let TraceSource::Generate(w) = &source {
            w.validate(&catalog)?;
        }
        let seed = self.seed.unwrap_or(match &source {
            TraceSource::Generate(w) => w.seed,
            TraceSource::File(_) => 0,
        });

        let strategies = if self.strategies.is_empty() {
            StrategyKind::ALL
                .iter()
                .map(|&k| SchedulerConfig::new(k))
                .collect()
        } else {
            self.strategies.clone()
        };
        let mut labels = std::collections::BTreeSet::new();
        for s in &strategies {
            s.validate()?;
            if !labels.insert(s.label()) {
                return Err(ExperimentError::Config(format!(
                    "duplicate strategy label {}",
                    s.label()
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.history_alpha) || self.history_alpha == 0.0 {
            return Err(ExperimentError::Config(
                "history_alpha must be in (0, 1]".into(),
            ));
        }
        if self.predictor.forest.trees == 0 {
            return Err(ExperimentError::Config(
                "predictor.forest.trees must be at least 1".into(),
            ));
        }

        let exp = Experiment {
            catalog,
            cluster,
            source,
            strategies,
            predictor: self.predictor.clone(),
            warmup: self.warmup,
            warmup_duration_ms: self.warmup_duration_ms,
            replications: self.replications,
            seed,
            recovery_window: self.recovery_window.max(1),
            history_alpha: self.history_alpha,
            history_prior_ms: self.history_prior_ms,
        };
        Ok(exp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TraceSource {
    Generate(WorkloadConfig),
    #[serde(serialize_with = "trace_digest")]
    File(Trace),
}

fn trace_digest<S: serde::Serializer>(t: &Trace, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&t.hash())
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub catalog: Catalog,
    pub cluster: ClusterConfig,
    pub source: TraceSource,
    pub strategies: Vec<SchedulerConfig>,
    pub predictor: OnlinePredictorConfig,
    pub warmup: bool,
    pub warmup_duration_ms: Option<f64>,
    pub replications: u32,
    pub seed: u64,
    pub recovery_window: usize,
    pub history_alpha: f64,
    pub history_prior_ms: f64,
}

/// Seed for stream `stream` of a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Wall clock for report metadata. `Instant` panics on wasm32 without a
/// host clock, so the browser build reports zero.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        return Stopwatch(std::time::Instant::now());
        #[cfg(target_arch = "wasm32")]
        Stopwatch()
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64() * 1e3;
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

const WARMUP_STREAM: u64 = 1 << 20;

/// Everything one `run` produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: Report,
    pub records: Vec<InvocationRecord>,
    pub decisions: Vec<DecisionRecord>,
    /// Replication 0 sample log per strategy.
    pub samples: BTreeMap<String, SampleLog>,
    /// Replication 0 event log per strategy.
    pub events: BTreeMap<String, EventLog>,
    pub updates: BTreeMap<String, Vec<UpdateReport>>,
}

impl Experiment {
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("experiment serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn trace(&self, replication: u32) -> Result<Trace, ExperimentError> {
        match &self.source {
            TraceSource::File(t) => Ok(t.clone()),
            TraceSource::Generate(w) => {
                let mut w = w.clone();
                w.seed = derive_seed(self.seed, u64::from(replication));
                Ok(generate(&w, &self.catalog)?)
            }
        }
    }

    fn engine_config(&self, scheduler: &SchedulerConfig, replication: u32) -> EngineConfig {
        EngineConfig {
            cluster: self.cluster.clone(),
            scheduler: scheduler.clone(),
            history_alpha: self.history_alpha,
            history_prior_ms: self.history_prior_ms,
            log_metrics_push: false,
            replication,
        }
    }

    fn needs_forest(&self) -> bool {
        self.strategies
            .iter()
            .any(|s| s.strategy == StrategyKind::Differentiated && s.estimator == EstimatorKind::Forest)
    }

    /// Predictor for one replication, pretrained on BS and NLS runs over a
    /// warm-up trace when enabled. Applications that only appear mid-run are
    /// left out of the warm-up trace.
    pub fn predictor_for(&self, replication: u32) -> Result<OnlinePredictor, ExperimentError> {
        let mut p = OnlinePredictor::new(self.predictor.clone());
        if !self.warmup {
            return Ok(p);
        }
        let mut w = match &self.source {
            TraceSource::Generate(w) => w.clone(),
            TraceSource::File(_) => return Ok(p),
        };
        w.seed = derive_seed(self.seed, WARMUP_STREAM + u64::from(replication));
        w.apps.retain(|a| a.available_from_ms <= 0.0);
        if let Some(d) = self.warmup_duration_ms {
            w.duration_ms = d;
        }
        if w.apps.is_empty() {
            return Ok(p);
        }
        let trace = generate(&w, &self.catalog)?;
        let mut samples = Vec::new();
        for kind in [StrategyKind::Bs, StrategyKind::Nls] {
            let cfg = self.engine_config(&SchedulerConfig::new(kind), replication);
            let r = Engine::new(cfg, &self.catalog, &trace, Estimator::History)?.run()?;
            samples.extend(r.samples.samples.into_iter().map(|s| Sample {
                x: s.features.as_slice().to_vec(),
                y: s.actual,
            }));
        }
        if samples.len() >= self.predictor.forest.min_leaf_size.max(1) {
            p.pretrain(samples)?;
        }
        Ok(p)
    }

    pub fn run_one(
        &self,
        scheduler: &SchedulerConfig,
        trace: &Trace,
        replication: u32,
        predictor: Option<&OnlinePredictor>,
    ) -> Result<RunResult, ExperimentError> {
        // Baselines never consult per-node estimates.
        let kind = match scheduler.strategy {
            StrategyKind::Differentiated => scheduler.estimator,
            _ => EstimatorKind::History,
        };
        let estimator = match kind {
            EstimatorKind::Oracle => Estimator::Oracle,
            EstimatorKind::History => Estimator::History,
            EstimatorKind::Forest => Estimator::Learned(Box::new(
                predictor
                    .cloned()
                    .unwrap_or_else(|| OnlinePredictor::new(self.predictor.clone())),
            )),
        };
        let cfg = self.engine_config(scheduler, replication);
        Ok(Engine::new(cfg, &self.catalog, trace, estimator)?.run()?)
    }

    pub fn run(&self) -> Result<RunArtifacts, ExperimentError> {
        let started = Stopwatch::start();
        let reps: Vec<u32> = (0..self.replications).collect();
        let traces: Vec<Trace> = map(&reps, |&r| self.trace(r))?;
        let predictors: Vec<Option<OnlinePredictor>> = if self.needs_forest() {
            map(&reps, |&r| self.predictor_for(r).map(Some))?
        } else {
            reps.iter().map(|_| None).collect()
        };
        let jobs: Vec<(usize, u32)> = (0..self.strategies.len())
            .flat_map(|s| reps.iter().map(move |&r| (s, r)))
            .collect();
        let results: Vec<RunResult> = map(&jobs, |&(s, r)| {
            let i = r as usize;
            self.run_one(&self.strategies[s], &traces[i], r, predictors[i].as_ref())
        })?;

        let mut art = RunArtifacts {
            report: Report {
                meta: RunMeta {
                    seed: self.seed,
                    config_hash: String::new(),
                    trace_hashes: Vec::new(),
                    strategies: Vec::new(),
                    replications: 0,
                    recovery_window: 0,
                    audit_ok: true,
                    wall_time_ms: 0.0,
                },
                strategies: Vec::new(),
                predictor: Vec::new(),
            },
            records: Vec::new(),
            decisions: Vec::new(),
            samples: BTreeMap::new(),
            events: BTreeMap::new(),
            updates: BTreeMap::new(),
        };
        let mut audit_ok = true;
        for ((s, r), res) in jobs.iter().zip(results) {
            let label = self.strategies[*s].label();
            audit_ok &= res.audit.ok() && res.unfinished == 0;
            art.records.extend(res.records);
            art.decisions.extend(res.decisions.records);
            if *r == 0 {
                art.samples.insert(label.clone(), res.samples);
                art.events.insert(label.clone(), res.events);
                art.updates.insert(label, res.updates);
            }
        }
        let meta = RunMeta {
            seed: self.seed,
            config_hash: self.config_hash(),
            trace_hashes: traces.iter().map(Trace::hash).collect(),
            strategies: self.strategies.iter().map(SchedulerConfig::label).collect(),
            replications: self.replications,
            recovery_window: self.recovery_window,
            audit_ok,
            wall_time_ms: started.elapsed_ms(),
        };
        art.report = Report::from_records(meta, &art.records, &art.decisions)?;
        Ok(art)
    }
}

#[cfg(feature = "parallel")]
fn map<T: Sync, U: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<U, ExperimentError> + Sync + Send,
) -> Result<Vec<U>, ExperimentError> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map<T, U>(
    items: &[T],
    f: impl Fn(&T) -> Result<U, ExperimentError>,
) -> Result<Vec<U>, ExperimentError> {
    items.iter().map(f).collect()
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl RunArtifacts {
    /// Writes `report.json`, `report.txt`, `invocations.csv`,
    /// `decisions.csv`, and per strategy `samples-<label>.csv` and
    /// `events-<label>.jsonl` (replication 0).
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report.to_json())?;
        fs::write(dir.join("report.txt"), self.report.summary())?;
        write_records_csv(
            &self.records,
            BufWriter::new(fs::File::create(dir.join("invocations.csv"))?),
        )?;
        let log = DecisionLog {
            records: self.decisions.clone(),
        };
        log.write_csv(BufWriter::new(fs::File::create(dir.join("decisions.csv"))?))?;
        for (label, s) in &self.samples {
            let f = fs::File::create(dir.join(format!("samples-{}.csv", file_label(label))))?;
            s.write_csv(BufWriter::new(f))
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        for (label, e) in &self.events {
            let f = fs::File::create(dir.join(format!("events-{}.jsonl", file_label(label))))?;
            e.write_jsonl(BufWriter::new(f))?;
        }
        Ok(())
    }
}

/// Rebuilds a report from the files written by `RunArtifacts::write`, using
/// the metadata of the stored report.
pub fn regenerate(dir: &Path) -> Result<Report, ExperimentError> {
    let stored = Report::from_json(&fs::read_to_string(dir.join("report.json"))?)?;
    let records = crate::sim::read_records_csv(fs::File::open(dir.join("invocations.csv"))?)?;
    let decisions = DecisionLog::read_csv(fs::File::open(dir.join("decisions.csv"))?)?;
    Report::from_records(stored.meta, &records, &decisions.records)
}
