//! Discrete-event model of a serverless cluster.

mod cluster;
mod engine;
mod event;
mod latency;
mod node;

use thiserror::Error;

use crate::model::{DataId, InvocationId, NodeId};

pub use cluster::{Cluster, ClusterConfig, Placement, Release};
pub use engine::{
    read_records_csv, write_records_csv, Engine, EngineConfig, EngineError, Estimator,
    InvocationRecord, RunResult,
};
pub use event::{Audit, Event, EventKind, EventLog, EventQueue, LogRecord};
pub use latency::{ground_truth_latency, LatencyBreakdown, LatencyModel};
pub use node::{CatalogEntry, DataCatalog, NodeState, Running};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("data object {0:?} is not in the catalog")]
    UnresolvedData(DataId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} has no free slot")]
    NoFreeSlot(NodeId),
    #[error("unknown invocation {0}")]
    UnknownInvocation(InvocationId),
}
