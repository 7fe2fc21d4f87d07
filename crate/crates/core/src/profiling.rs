//! Node snapshots pushed to the scheduler, the 14-dimensional feature vector
//! fed to the predictor, and the observed-sample log.
//!
//! Feature layout (fixed for the whole run):
//!
//! | idx | group | field |
//! |-----|-------|-------|
//! | 0-3 | system | cpu_util, load_avg, mem_util, disk_io_mbps |
//! | 4-6 | container | warm_count, zygote_count, cached_dep_overlap |
//! | 7-9 | network | bandwidth_util, packet_rate, rtt_ms |
//! | 10-13 | function | input_size, dep_count, hist_exec_ms, data_local_bytes |

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FunctionId, FunctionSpec, Invocation, Millis, NodeId};
use crate::sim::{DataCatalog, NodeState};

pub const FEATURE_DIM: usize = 14;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "cpu_util",
    "load_avg",
    "mem_util",
    "disk_io_mbps",
    "warm_count",
    "zygote_count",
    "cached_dep_overlap",
    "bandwidth_util",
    "packet_rate",
    "rtt_ms",
    "input_size",
    "dep_count",
    "hist_exec_ms",
    "data_local_bytes",
];

pub const IDX_WARM_COUNT: usize = 4;
pub const IDX_DEP_OVERLAP: usize = 6;
pub const IDX_INPUT_SIZE: usize = 10;
pub const IDX_HIST_EXEC: usize = 12;
pub const IDX_DATA_LOCAL: usize = 13;

const LOAD_AVG_TAU_MS: f64 = 1000.0;
const BASE_RTT_MS: f64 = 0.2;
const MTU_BYTES: f64 = 1500.0;

#[derive(Debug, Error)]
pub enum ProfilingError {
    #[error("observed execution time must be positive, got {0}")]
    NonPositiveActual(f64),
    #[error("sample log: {0}")]
    Csv(#[from] csv::Error),
    #[error("sample log row {row}: {msg}")]
    BadRow { row: usize, msg: String },
}

/// Scheduler-side cached view of one node, replaced on every metrics push.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSnapshot {
    pub node: NodeId,
    pub as_of: Millis,
    pub cpu_util: f64,
    pub load_avg: f64,
    pub mem_util: f64,
    pub disk_io_mbps: f64,
    pub warm: BTreeMap<FunctionId, u32>,
    pub zygotes: u32,
    pub dep_cache: Arc<BTreeMap<String, Millis>>,
    pub bandwidth_util: f64,
    pub packet_rate: f64,
    pub rtt_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub cpu_util: f64,
    pub load_avg: f64,
    pub mem_util: f64,
    pub disk_io_mbps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContainerMetrics {
    pub warm_count: u32,
    pub zygote_count: u32,
    pub cached_dep_overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetrics {
    pub bandwidth_util: f64,
    pub packet_rate: f64,
    pub rtt_ms: f64,
}

/// A node snapshot viewed from one function's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub system: SystemMetrics,
    pub container: ContainerMetrics,
    pub network: NetworkMetrics,
    pub as_of: Millis,
}

/// Fraction of the function's packages already cached on the node,
/// `|deps ∩ cache| / max(1, |deps|)`.
pub fn dep_overlap(deps: &[String], cache: &BTreeMap<String, Millis>) -> f64 {
    let hit = deps.iter().filter(|d| cache.contains_key(*d)).count();
    hit as f64 / deps.len().max(1) as f64
}

/// Builds the snapshot a node agent would push at `now`. `prev` is the
/// previous snapshot of the same node, used for the load average.
pub fn push_snapshot(node: &NodeState, now: Millis, prev: Option<&NodeSnapshot>) -> NodeSnapshot {
    let slots = node.cpu_slots.max(1) as f64;
    let running = node.running.len() as f64;
    let load_avg = match prev {
        Some(p) => {
            let decay = (-(now - p.as_of).max(0.0) / LOAD_AVG_TAU_MS).exp();
            p.load_avg * decay + running * (1.0 - decay)
        }
        None => running,
    };
    let active = node.active_remote_transfers(now) as f64;
    NodeSnapshot {
        node: node.id,
        as_of: now,
        cpu_util: (running / slots).min(1.0),
        load_avg,
        mem_util: ((running + 0.5 * node.total_warm() as f64) / (2.0 * slots)).min(1.0),
        disk_io_mbps: node.local_read_rate(now) / 1e6,
        warm: node
            .warm_pool
            .iter()
            .map(|(f, v)| (f.clone(), v.len() as u32))
            .collect(),
        zygotes: node.zygotes,
        dep_cache: Arc::clone(&node.dep_cache),
        bandwidth_util: (active / slots).min(1.0),
        packet_rate: node.pending_transfer_bytes(now) / MTU_BYTES,
        rtt_ms: BASE_RTT_MS * (1.0 + active),
    }
}

impl NodeSnapshot {
    pub fn warm_count(&self, f: &FunctionId) -> u32 {
        self.warm.get(f).copied().unwrap_or(0)
    }

    pub fn metrics_for(&self, spec: &FunctionSpec) -> NodeMetrics {
        NodeMetrics {
            system: SystemMetrics {
                cpu_util: self.cpu_util,
                load_avg: self.load_avg,
                mem_util: self.mem_util,
                disk_io_mbps: self.disk_io_mbps,
            },
            container: ContainerMetrics {
                warm_count: self.warm_count(&spec.id),
                zygote_count: self.zygotes,
                cached_dep_overlap: dep_overlap(&spec.deps, &self.dep_cache),
            },
            network: NetworkMetrics {
                bandwidth_util: self.bandwidth_util,
                packet_rate: self.packet_rate,
                rtt_ms: self.rtt_ms,
            },
            as_of: self.as_of,
        }
    }
}

/// Latest snapshot per node. Pushes swap in a new `Arc`, so a reader holding
/// an older snapshot is never disturbed by a push.
#[derive(Debug, Clone, Default)]
pub struct MetricsCache {
    snapshots: Vec<Arc<NodeSnapshot>>,
}

impl MetricsCache {
    pub fn new(initial: Vec<NodeSnapshot>) -> Self {
        MetricsCache {
            snapshots: initial.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn push(&mut self, snap: NodeSnapshot) {
        let idx = snap.node.index();
        self.snapshots[idx] = Arc::new(snap);
    }

    pub fn get(&self, node: NodeId) -> &NodeSnapshot {
        &self.snapshots[node.index()]
    }

    pub fn shared(&self, node: NodeId) -> Arc<NodeSnapshot> {
        Arc::clone(&self.snapshots[node.index()])
    }

    pub fn staleness(&self, node: NodeId, now: Millis) -> Millis {
        now - self.get(node).as_of
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Exponentially weighted history of execution times per function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub alpha: f64,
    pub prior_ms: Millis,
    by_fn: BTreeMap<FunctionId, f64>,
}

impl Default for History {
    fn default() -> Self {
        History::new(0.3, 1000.0)
    }
}

impl History {
    pub fn new(alpha: f64, prior_ms: Millis) -> Self {
        History {
            alpha,
            prior_ms,
            by_fn: BTreeMap::new(),
        }
    }

    pub fn get(&self, f: &FunctionId) -> Millis {
        self.by_fn.get(f).copied().unwrap_or(self.prior_ms)
    }

    pub fn record(&mut self, f: &FunctionId, exec_ms: Millis) {
        let a = self.alpha;
        self.by_fn
            .entry(f.clone())
            .and_modify(|m| *m = a * exec_ms + (1.0 - a) * *m)
            .or_insert(exec_ms);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn data_local_bytes(&self) -> f64 {
        self.0[IDX_DATA_LOCAL]
    }

    pub fn hist_exec_ms(&self) -> f64 {
        self.0[IDX_HIST_EXEC]
    }
}

/// Predecessor bytes of `inv` that `catalog` places on `node`.
pub fn local_bytes(inv: &Invocation, node: NodeId, catalog: &DataCatalog) -> u64 {
    inv.predecessor_outputs
        .iter()
        .filter(|d| d.producer.is_some() && catalog.get(d.data).map(|e| e.node) == Some(node))
        .map(|d| d.size)
        .sum()
}

pub fn assemble_features(
    inv: &Invocation,
    spec: &FunctionSpec,
    view: &NodeMetrics,
    history: &History,
    data_local_bytes: u64,
) -> FeatureVector {
    let s = &view.system;
    let c = &view.container;
    let n = &view.network;
    FeatureVector([
        s.cpu_util,
        s.load_avg,
        s.mem_util,
        s.disk_io_mbps,
        c.warm_count as f64,
        c.zygote_count as f64,
        c.cached_dep_overlap,
        n.bandwidth_util,
        n.packet_rate,
        n.rtt_ms,
        inv.input_size as f64,
        spec.dep_count() as f64,
        history.get(&inv.function),
        data_local_bytes as f64,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSample {
    pub features: FeatureVector,
    pub actual: Millis,
    pub function: FunctionId,
    pub node: NodeId,
    pub t: Millis,
    /// What the scheduler's predictor said when the decision was made.
    pub predicted: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub function: FunctionId,
    pub node: NodeId,
    pub t: Millis,
    pub predicted: Option<Millis>,
}

/// Append-only record of every observation in a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleLog {
    pub samples: Vec<ObservedSample>,
}

pub fn record_observation(
    log: &mut SampleLog,
    features: FeatureVector,
    actual: Millis,
    meta: SampleMeta,
) -> Result<ObservedSample, ProfilingError> {
    if !(actual.is_finite() && actual > 0.0) {
        return Err(ProfilingError::NonPositiveActual(actual));
    }
    let s = ObservedSample {
        features,
        actual,
        function: meta.function,
        node: meta.node,
        t: meta.t,
        predicted: meta.predicted,
    };
    log.samples.push(s.clone());
    Ok(s)
}

impl SampleLog {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Columns: the 14 feature names, then actual, fn, node, t, predicted.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProfilingError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
        header.extend(["actual", "fn", "node", "t", "predicted"]);
        out.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.features.0.iter().map(|v| v.to_string()).collect();
            row.push(s.actual.to_string());
            row.push(s.function.0.clone());
            row.push(s.node.0.to_string());
            row.push(s.t.to_string());
            row.push(s.predicted.map(|p| p.to_string()).unwrap_or_default());
            out.write_record(&row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ProfilingError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |msg: &str| ProfilingError::BadRow {
                row,
                msg: msg.to_string(),
            };
            if rec.len() != FEATURE_DIM + 5 {
                return Err(bad("wrong column count"));
            }
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| bad(&format!("column {i} not numeric")))
            };
            let mut x = [0.0; FEATURE_DIM];
            for (i, v) in x.iter_mut().enumerate() {
                *v = num(i)?;
            }
            let node = rec[FEATURE_DIM + 2]
                .parse::<u32>()
                .map_err(|_| bad("bad node id"))?;
            let predicted = match &rec[FEATURE_DIM + 4] {
                "" => None,
                _ => Some(num(FEATURE_DIM + 4)?),
            };
            samples.push(ObservedSample {
                features: FeatureVector(x),
                actual: num(FEATURE_DIM)?,
                function: FunctionId(rec[FEATURE_DIM + 1].to_string()),
                node: NodeId(node),
                t: num(FEATURE_DIM + 3)?,
                predicted,
            });
        }
        Ok(SampleLog { samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComputeDist, DataId, DataRef, InvocationId, SizeDist};

    fn spec(deps: &[&str]) -> FunctionSpec {
        FunctionSpec {
            id: "f".into(),
            deps: deps.iter().map(|s| s.to_string()).collect(),
            base_compute: ComputeDist {
                mean_ms: 10.0,
                cv: 0.0,
            },
            input_size: SizeDist::fixed(0.0),
            sla_theta_ms: 1000.0,
            stage: None,
        }
    }

    #[test]
    fn staleness_between_pushes() {
        let node = NodeState::new(NodeId(0), 4, 0, 1e9, 2e9);
        let mut cache = MetricsCache::new(vec![push_snapshot(&node, 0.0, None)]);
        let s = push_snapshot(&node, 100.0, Some(cache.get(NodeId(0))));
        cache.push(s);
        assert_eq!(cache.get(NodeId(0)).as_of, 100.0);
        assert_eq!(cache.staleness(NodeId(0), 130.0), 30.0);
        let s = push_snapshot(&node, 150.0, Some(cache.get(NodeId(0))));
        cache.push(s);
        assert_eq!(cache.get(NodeId(0)).as_of, 150.0);
    }

    #[test]
    fn idle_node_snapshot() {
        let mut node = NodeState::new(NodeId(0), 4, 1, 1e9, 2e9);
        node.insert_warm(&"f".into(), 1e9, None);
        let s = push_snapshot(&node, 0.0, None);
        assert_eq!(s.cpu_util, 0.0);
        assert_eq!(s.warm_count(&"f".into()), 1);
        assert_eq!(s.metrics_for(&spec(&[])).container.zygote_count, 1);
    }

    #[test]
    fn overlap_is_set_intersection() {
        let mut node = NodeState::new(NodeId(0), 4, 0, 1e9, 2e9);
        let cached = vec!["a".to_string(), "b".to_string()];
        node.cache_deps(&cached, 0.0);
        let f = spec(&["a", "b", "c", "d"]);
        let m = push_snapshot(&node, 0.0, None).metrics_for(&f);
        assert_eq!(m.container.cached_dep_overlap, 0.5);
        let g = spec(&["a", "b"]);
        assert_eq!(
            push_snapshot(&node, 0.0, None)
                .metrics_for(&g)
                .container
                .cached_dep_overlap,
            1.0
        );
    }

    #[test]
    fn history_prior_and_ewma() {
        let mut h = History::default();
        let f = FunctionId::from("f");
        assert_eq!(h.get(&f), 1000.0);
        h.record(&f, 100.0);
        assert_eq!(h.get(&f), 100.0);
        h.record(&f, 200.0);
        assert!((h.get(&f) - 130.0).abs() < 1e-12);
    }

    #[test]
    fn features_have_fixed_layout() {
        let f = spec(&["a"]);
        let mut cat = DataCatalog::new();
        cat.insert(DataId(1), NodeId(0), 300);
        cat.insert(DataId(2), NodeId(0), 700);
        let inv = Invocation::new(
            InvocationId(0),
            &f,
            0.0,
            1000,
            vec![
                DataRef {
                    data: DataId(1),
                    size: 300,
                    producer: Some(NodeId(0)),
                },
                DataRef {
                    data: DataId(2),
                    size: 700,
                    producer: Some(NodeId(0)),
                },
            ],
            10.0,
        );
        let node = NodeState::new(NodeId(0), 4, 0, 1e9, 2e9);
        let m = push_snapshot(&node, 0.0, None).metrics_for(&f);
        let lb = local_bytes(&inv, NodeId(0), &cat);
        assert_eq!(lb, 1000);
        let x = assemble_features(&inv, &f, &m, &History::default(), lb);
        assert_eq!(x.0.len(), FEATURE_DIM);
        assert_eq!(x.0[IDX_INPUT_SIZE], 1000.0);
        assert_eq!(x.0[11], 1.0);
        assert_eq!(x.hist_exec_ms(), 1000.0);
        assert_eq!(x.data_local_bytes(), 1000.0);
        assert_eq!(x, assemble_features(&inv, &f, &m, &History::default(), lb));
    }

    #[test]
    fn sample_log_round_trip_and_validation() {
        let mut log = SampleLog::default();
        let meta = |t| SampleMeta {
            function: "f".into(),
            node: NodeId(1),
            t,
            predicted: None,
        };
        let x = FeatureVector([
            0.1,
            1.0 / 3.0,
            0.0,
            2.5,
            1.0,
            0.0,
            0.25,
            0.0,
            12.0,
            0.2,
            1e8,
            3.0,
            1000.0,
            0.0,
        ]);
        let s = record_observation(&mut log, x, 1200.0, meta(5.0)).unwrap();
        assert_eq!(s.actual, 1200.0);
        record_observation(
            &mut log,
            x,
            0.1 + 0.2,
            SampleMeta {
                predicted: Some(7.0),
                ..meta(6.0)
            },
        )
        .unwrap();
        assert_eq!(log.len(), 2);
        assert!(record_observation(&mut log, x, 0.0, meta(7.0)).is_err());
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = SampleLog::read_csv(&buf[..]).unwrap();
        assert_eq!(back, log);
    }
}
