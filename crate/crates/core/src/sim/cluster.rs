use serde::{Deserialize, Serialize};

use crate::model::{DataId, FunctionId, FunctionSpec, Invocation, InvocationId, Millis, NodeId};

use super::latency::{ground_truth_latency, LatencyBreakdown, LatencyModel};
use super::node::{DataCatalog, NodeState, Running};
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub nodes: u32,
    pub cpu_slots: u32,
    pub bandwidth_bps: f64,
    /// Bytes per second for node-local data access.
    pub local_bandwidth: f64,
    pub zygotes: u32,
    pub push_interval_ms: Millis,
    pub latency: LatencyModel,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            nodes: 10,
            cpu_slots: 4,
            bandwidth_bps: 1e9,
            local_bandwidth: 2e9,
            zygotes: 0,
            push_interval_ms: 50.0,
            latency: LatencyModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub node: NodeId,
    pub complete_at: Millis,
    pub breakdown: LatencyBreakdown,
    pub queue_delay: Millis,
}

/// Emitted when an invocation finishes; the scheduler layer uses it to
/// re-evaluate waiting work.
#[derive(Debug, Clone, PartialEq)]
pub struct Release {
    pub node: NodeId,
    pub function: FunctionId,
    pub warm_expiry: Millis,
}

/// Ground-truth state of every node plus the data catalog.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub nodes: Vec<NodeState>,
    pub data: DataCatalog,
    pub model: LatencyModel,
}

impl Cluster {
    pub fn new(cfg: &ClusterConfig) -> Self {
        let nodes = (0..cfg.nodes)
            .map(|i| {
                NodeState::new(
                    NodeId(i),
                    cfg.cpu_slots,
                    cfg.zygotes,
                    cfg.bandwidth_bps,
                    cfg.local_bandwidth,
                )
            })
            .collect();
        Cluster {
            nodes,
            data: DataCatalog::new(),
            model: cfg.latency.clone(),
        }
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeState, SimError> {
        self.nodes.get(id.index()).ok_or(SimError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut NodeState, SimError> {
        self.nodes
            .get_mut(id.index())
            .ok_or(SimError::UnknownNode(id))
    }

    pub fn purge_expired(&mut self, now: Millis) {
        let ttl = self.model.dep_cache_ttl_ms;
        for n in &mut self.nodes {
            n.purge_expired(now, ttl);
        }
    }

    pub fn latency(
        &self,
        inv: &Invocation,
        spec: &FunctionSpec,
        node: NodeId,
        now: Millis,
    ) -> Result<LatencyBreakdown, SimError> {
        ground_truth_latency(inv, spec, self.node(node)?, &self.data, &self.model, now)
    }

    /// Starts `inv` on `node`: takes a warm container if one exists, occupies a
    /// slot and reports when the invocation will complete.
    pub fn place(
        &mut self,
        inv: &Invocation,
        spec: &FunctionSpec,
        node: NodeId,
        now: Millis,
    ) -> Result<Placement, SimError> {
        if !self.node(node)?.has_free_slot() {
            return Err(SimError::NoFreeSlot(node));
        }
        let b = self.latency(inv, spec, node, now)?;
        let n = self.node_mut(node)?;
        if b.warm_hit {
            n.take_warm(&inv.function);
        }
        let local_transfer = b.transfer - b.remote_transfer;
        n.running.insert(
            inv.id,
            Running {
                function: inv.function.clone(),
                started: now,
                finishes: now + b.total,
                remote_bytes: b.remote_bytes,
                remote_end: now + b.remote_transfer,
                local_bytes: b.local_bytes,
                local_end: now + local_transfer,
            },
        );
        Ok(Placement {
            node,
            complete_at: now + b.total,
            breakdown: b,
            queue_delay: now - inv.arrival_ms,
        })
    }

    /// Frees the slot, records the outputs at this node, refreshes a warm
    /// container and caches the function's packages.
    pub fn on_complete(
        &mut self,
        invocation: InvocationId,
        spec: &FunctionSpec,
        node: NodeId,
        now: Millis,
        outputs: &[(DataId, u64)],
    ) -> Result<Release, SimError> {
        let ttl = self.model.warm_ttl_ms;
        let cap = self.model.warm_pool_cap;
        let n = self.node_mut(node)?;
        let run = n
            .running
            .remove(&invocation)
            .ok_or(SimError::UnknownInvocation(invocation))?;
        let expiry = now + ttl;
        n.insert_warm(&run.function, expiry, cap);
        n.cache_deps(&spec.deps, now);
        n.purge_expired(now, None);
        for &(id, size) in outputs {
            self.data.insert(id, node, size);
        }
        Ok(Release {
            node,
            function: run.function,
            warm_expiry: expiry,
        })
    }
}
