//! Placement strategies.
//!
//! Every strategy is a pure function of a [`NodeView`] slice (exact slot
//! counts plus possibly stale locality signals) and, for the predictive
//! strategy, one predicted execution time per node. The engine owns the
//! queue, the delay states and the clock.

mod baselines;
mod differentiated;
mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InvocationId, Millis, NodeId};

pub use baselines::{
    bs_schedule, least_loaded_free, nls_schedule, rds_recheck, rds_schedule, rds_timeout,
    ring_next_free,
};
pub use differentiated::{differentiated_schedule, monitor_tick, MonitorResult, Planned};
pub use log::{DecisionLog, DecisionRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("no candidate nodes")]
    NoNodes,
    #[error("prediction vector has {got} entries for {nodes} nodes")]
    PredictionLength { nodes: usize, got: usize },
    #[error("invalid scheduler config: {0}")]
    Config(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Bs,
    Nls,
    Rds,
    Differentiated,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Bs,
        StrategyKind::Nls,
        StrategyKind::Rds,
        StrategyKind::Differentiated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Bs => "bs",
            StrategyKind::Nls => "nls",
            StrategyKind::Rds => "rds",
            StrategyKind::Differentiated => "differentiated",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SchedError::UnknownStrategy(s.to_string()))
    }
}

/// Source of the per-node execution-time estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Ground-truth latency of the live cluster.
    Oracle,
    /// Online random forest over the feature vector.
    Forest,
    /// Per-function execution-time history only.
    History,
}

/// Where RDS places an invocation that has no data-local node or whose
/// delay timed out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RdsFallback {
    /// Next free node in the platform's ring order.
    RoundRobin,
    /// Free node with the fewest running invocations, ties to the lowest id.
    LeastLoaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub strategy: StrategyKind,
    /// Display name in reports; defaults to the strategy name.
    pub label: Option<String>,
    pub estimator: EstimatorKind,
    pub alpha: f64,
    pub beta: f64,
    pub monitor_interval_ms: Millis,
    pub overlap_min: f64,
    pub w_data: f64,
    pub w_infra: f64,
    /// Fixed RDS timeout. When unset, `rds_timeout_factor * mean service
    /// time * ln(nodes)` is used.
    pub rds_timeout_ms: Option<Millis>,
    pub rds_timeout_factor: f64,
    pub rds_fallback: RdsFallback,
    /// Charge the time already spent waiting against the SLA budget in the
    /// monitor's violation check. Disabling it gives the elapsed-free form.
    pub charge_elapsed: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            strategy: StrategyKind::Differentiated,
            label: None,
            estimator: EstimatorKind::Forest,
            alpha: 0.8,
            beta: 0.1,
            monitor_interval_ms: 100.0,
            overlap_min: 0.3,
            w_data: 0.5,
            w_infra: 0.5,
            rds_timeout_ms: None,
            rds_timeout_factor: 1.5,
            rds_fallback: RdsFallback::RoundRobin,
            charge_elapsed: true,
        }
    }
}

impl SchedulerConfig {
    pub fn new(strategy: StrategyKind) -> Self {
        SchedulerConfig {
            strategy,
            ..Default::default()
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.strategy.name().to_string())
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |m: &str| Err(SchedError::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must be in (0,1)");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta must be in [0,1)");
        }
        if !(self.monitor_interval_ms > 0.0) {
            return bad("monitor_interval_ms must be positive");
        }
        if !(self.overlap_min > 0.0 && self.overlap_min <= 1.0) {
            return bad("overlap_min must be in (0,1]");
        }
        if self.w_data < 0.0
            || self.w_infra < 0.0
            || ((self.w_data + self.w_infra) - 1.0).abs() > 1e-9
        {
            return bad("w_data and w_infra must be non-negative and sum to 1");
        }
        if self.rds_timeout_ms.is_some_and(|d| !(d >= 0.0)) || !(self.rds_timeout_factor > 0.0) {
            return bad("RDS timeout must be non-negative");
        }
        Ok(())
    }
}

/// What the scheduler knows about one node when deciding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeView {
    pub id: NodeId,
    pub free_slots: u32,
    pub running: u32,
    /// Predecessor bytes of the invocation held by this node.
    pub local_bytes: u64,
    pub warm: bool,
    pub dep_overlap: f64,
}

impl NodeView {
    pub fn is_free(&self) -> bool {
        self.free_slots > 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeClassification {
    /// Local nodes with their locality score in (0,1].
    pub local: BTreeMap<NodeId, f64>,
    pub fallback: BTreeSet<NodeId>,
}

impl NodeClassification {
    pub fn is_local(&self, n: NodeId) -> bool {
        self.local.contains_key(&n)
    }
}

/// Splits the candidates into local and fallback nodes.
///
/// A node is local when it holds predecessor output, has a warm container
/// for the function, or has at least `overlap_min` of its packages cached.
/// The score is `w_data * local_fraction + w_infra * max(warm, overlap)`.
pub fn classify_nodes(
    predecessor_bytes: u64,
    nodes: &[NodeView],
    cfg: &SchedulerConfig,
) -> Result<NodeClassification, SchedError> {
    if nodes.is_empty() {
        return Err(SchedError::NoNodes);
    }
    let mut c = NodeClassification::default();
    for n in nodes {
        let data = if predecessor_bytes > 0 {
            n.local_bytes as f64 / predecessor_bytes as f64
        } else {
            0.0
        };
        let warm = if n.warm { 1.0 } else { 0.0 };
        let infra = f64::max(warm, n.dep_overlap);
        let is_local = data > 0.0 || n.warm || n.dep_overlap >= cfg.overlap_min;
        let score = cfg.w_data * data + cfg.w_infra * infra;
        if is_local && score > 0.0 {
            c.local.insert(n.id, score.min(1.0));
        } else {
            c.fallback.insert(n.id);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    NoLocal,
    BenefitInsufficient,
    DelayForLocality,
    SlaForcedFallback,
    TargetAvailable,
    RoundRobin,
    LocalFree,
    LocalBusy,
    DataLocalFree,
    DelayTimeout,
}

impl Reason {
    pub fn tag(self) -> &'static str {
        match self {
            Reason::NoLocal => "no-local",
            Reason::BenefitInsufficient => "benefit-insufficient",
            Reason::DelayForLocality => "delay-for-locality",
            Reason::SlaForcedFallback => "sla-forced-fallback",
            Reason::TargetAvailable => "target-available",
            Reason::RoundRobin => "round-robin",
            Reason::LocalFree => "local-free",
            Reason::LocalBusy => "local-busy",
            Reason::DataLocalFree => "data-local-free",
            Reason::DelayTimeout => "delay-timeout",
        }
    }

    pub fn from_tag(s: &str) -> Option<Reason> {
        use Reason::*;
        [
            NoLocal,
            BenefitInsufficient,
            DelayForLocality,
            SlaForcedFallback,
            TargetAvailable,
            RoundRobin,
            LocalFree,
            LocalBusy,
            DataLocalFree,
            DelayTimeout,
        ]
        .into_iter()
        .find(|r| r.tag() == s)
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Immediate {
        node: NodeId,
        reason: Reason,
    },
    /// Hold the invocation for `target`. For RDS the target is `None`: any
    /// data-local node is acceptable.
    Delay {
        target: Option<NodeId>,
        reason: Reason,
    },
    /// Nothing can be placed now; stay at the head of the queue.
    Wait,
}

/// A decision plus the estimates that produced it, for the decision log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub decision: Decision,
    pub t_local: Option<Millis>,
    pub t_fallback: Option<Millis>,
}

impl Outcome {
    pub fn plain(decision: Decision) -> Self {
        Outcome {
            decision,
            t_local: None,
            t_fallback: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayKind {
    Differentiated,
    Rds,
}

/// A held invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayState {
    pub invocation: InvocationId,
    pub kind: DelayKind,
    /// `η_l`; unused for RDS.
    pub target: NodeId,
    pub started: Millis,
    pub arrival: Millis,
    pub theta: Millis,
    pub next_tick: Millis,
    /// Fallback nodes as classified when the delay started.
    pub fallback: Vec<NodeId>,
    /// Other local nodes, used as the SLA pool when `fallback` is empty.
    pub other_local: Vec<NodeId>,
    /// RDS: the absolute time at which locality is abandoned.
    pub timeout_at: Millis,
    pub generation: u64,
}

/// Index of the minimum over `candidates`, ties to the lowest node id.
pub(crate) fn argmin<I: IntoIterator<Item = NodeId>>(
    candidates: I,
    t: &[Millis],
) -> Option<(NodeId, Millis)> {
    let mut best: Option<(NodeId, Millis)> = None;
    for n in candidates {
        let v = t[n.index()];
        if v.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((bn, bv)) => v < bv || (v == bv && n.0 < bn.0),
        };
        if better {
            best = Some((n, v));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn view(id: u32, free: u32, local: u64, warm: bool, overlap: f64) -> NodeView {
        NodeView {
            id: NodeId(id),
            free_slots: free,
            running: 4 - free.min(4),
            local_bytes: local,
            warm,
            dep_overlap: overlap,
        }
    }

    #[test]
    fn classification_follows_locality_signals() {
        let cfg = SchedulerConfig::default();
        let nodes = [
            view(0, 1, 100, false, 0.0),
            view(1, 1, 0, true, 0.0),
            view(2, 1, 0, false, 0.0),
        ];
        let c = classify_nodes(100, &nodes, &cfg).unwrap();
        assert_eq!(
            c.local.keys().copied().collect::<Vec<_>>(),
            vec![NodeId(0), NodeId(1)]
        );
        assert_eq!(
            c.fallback.iter().copied().collect::<Vec<_>>(),
            vec![NodeId(2)]
        );
        assert_eq!(c.local[&NodeId(0)], 0.5);
        assert_eq!(c.local[&NodeId(1)], 0.5);
    }

    #[test]
    fn overlap_threshold() {
        let cfg = SchedulerConfig::default();
        let nodes = [view(0, 1, 0, false, 0.25), view(1, 1, 0, false, 0.5)];
        let c = classify_nodes(0, &nodes, &cfg).unwrap();
        assert!(!c.is_local(NodeId(0)));
        assert_eq!(c.local[&NodeId(1)], 0.25);
    }

    #[test]
    fn nothing_local_and_single_node() {
        let cfg = SchedulerConfig::default();
        let none = [view(0, 1, 0, false, 0.0), view(1, 1, 0, false, 0.1)];
        assert!(classify_nodes(50, &none, &cfg).unwrap().local.is_empty());
        let one = [view(0, 1, 50, true, 1.0)];
        let c = classify_nodes(50, &one, &cfg).unwrap();
        assert_eq!(c.local[&NodeId(0)], 1.0);
        assert!(c.fallback.is_empty());
        assert_eq!(classify_nodes(0, &[], &cfg), Err(SchedError::NoNodes));
    }

    #[test]
    fn argmin_ties_to_lowest_id() {
        let t = [5.0, 3.0, 3.0, 9.0];
        assert_eq!(
            argmin([NodeId(3), NodeId(2), NodeId(1)], &t),
            Some((NodeId(1), 3.0))
        );
        assert_eq!(argmin(std::iter::empty(), &t), None);
    }

    #[test]
    fn config_validation_and_names() {
        assert!(SchedulerConfig::default().validate().is_ok());
        let bad = SchedulerConfig {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("metro".parse::<StrategyKind>().is_err());
        assert_eq!(
            Reason::from_tag("sla-forced-fallback"),
            Some(Reason::SlaForcedFallback)
        );
    }
}
