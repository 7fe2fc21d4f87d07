use serde::{Deserialize, Serialize};

use crate::model::{FunctionSpec, Invocation, Millis, NodeId};

use super::node::{DataCatalog, NodeState};
use super::SimError;

/// Constants of the ground-truth latency model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub cold_start_ms: Millis,
    pub zygote_fork_ms: Millis,
    pub per_dep_install_ms: Millis,
    pub warm_ttl_ms: Millis,
    /// Compute slowdown slope once running invocations exceed `rho * slots`.
    pub kappa: f64,
    pub rho: f64,
    pub warm_pool_cap: Option<u32>,
    pub dep_cache_ttl_ms: Option<Millis>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            cold_start_ms: 500.0,
            zygote_fork_ms: 80.0,
            per_dep_install_ms: 150.0,
            warm_ttl_ms: 60_000.0,
            kappa: 0.5,
            rho: 0.8,
            warm_pool_cap: None,
            dep_cache_ttl_ms: None,
        }
    }
}

impl LatencyModel {
    pub fn contention_factor(&self, running: usize, cpu_slots: u32) -> f64 {
        let slots = cpu_slots.max(1) as f64;
        1.0 + self.kappa * (running as f64 - slots * self.rho).max(0.0) / slots
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub transfer: Millis,
    pub init: Millis,
    pub deps: Millis,
    pub compute: Millis,
    pub total: Millis,
    /// Split of `transfer` into its network and node-local parts.
    #[serde(skip)]
    pub remote_transfer: Millis,
    #[serde(skip)]
    pub remote_bytes: u64,
    #[serde(skip)]
    pub local_bytes: u64,
    #[serde(skip)]
    pub warm_hit: bool,
}

/// Latency an invocation would experience if it started on `node` at `now`.
///
/// Network transfers share the link with transfers already in flight on the
/// receiving node (equal shares at admission time); node-local reads run at
/// `local_bandwidth`. Reusing a warm container skips both initialization and
/// package installation.
pub fn ground_truth_latency(
    inv: &Invocation,
    spec: &FunctionSpec,
    node: &NodeState,
    catalog: &DataCatalog,
    model: &LatencyModel,
    now: Millis,
) -> Result<LatencyBreakdown, SimError> {
    let mut remote_bytes = 0u64;
    let mut local_bytes = 0u64;
    for d in &inv.predecessor_outputs {
        let holder: Option<NodeId> = match d.producer {
            None => None,
            Some(_) => Some(
                catalog
                    .get(d.data)
                    .ok_or(SimError::UnresolvedData(d.data))?
                    .node,
            ),
        };
        if holder == Some(node.id) {
            local_bytes += d.size;
        } else {
            remote_bytes += d.size;
        }
    }
    let share = 1.0 + node.active_remote_transfers(now) as f64;
    let remote_transfer = if remote_bytes > 0 {
        remote_bytes as f64 * 8.0 / (node.bandwidth_bps / share) * 1000.0
    } else {
        0.0
    };
    let local_transfer = if local_bytes > 0 {
        local_bytes as f64 / node.local_bandwidth * 1000.0
    } else {
        0.0
    };

    let warm_hit = node.warm_count(&inv.function) > 0;
    let init = if warm_hit {
        0.0
    } else if node.zygotes > 0 {
        model.zygote_fork_ms
    } else {
        model.cold_start_ms
    };
    let deps = if warm_hit {
        0.0
    } else {
        let missing = spec
            .deps
            .iter()
            .filter(|p| !node.dep_cache.contains_key(*p))
            .count();
        missing as f64 * model.per_dep_install_ms
    };
    let compute = inv.compute_draw_ms * model.contention_factor(node.running.len(), node.cpu_slots);
    let transfer = remote_transfer + local_transfer;
    Ok(LatencyBreakdown {
        transfer,
        init,
        deps,
        compute,
        total: transfer + init + deps + compute,
        remote_transfer,
        remote_bytes,
        local_bytes,
        warm_hit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComputeDist, DataId, DataRef, InvocationId, SizeDist};

    fn spec(deps: usize) -> FunctionSpec {
        FunctionSpec {
            id: "f".into(),
            deps: (0..deps).map(|i| format!("p{i}")).collect(),
            base_compute: ComputeDist {
                mean_ms: 100.0,
                cv: 0.0,
            },
            input_size: SizeDist::fixed(0.0),
            sla_theta_ms: 10_000.0,
            stage: None,
        }
    }

    fn inv(spec: &FunctionSpec, preds: Vec<DataRef>) -> Invocation {
        let size = preds.iter().map(|d| d.size).sum();
        Invocation::new(InvocationId(0), spec, 0.0, size, preds, 100.0)
    }

    #[test]
    fn remote_100mb_over_1gbps_is_800ms() {
        let s = spec(0);
        let mut cat = DataCatalog::new();
        cat.insert(DataId(1), NodeId(1), 100_000_000);
        let node = NodeState::new(NodeId(0), 4, 0, 1e9, 2e9);
        let i = inv(
            &s,
            vec![DataRef {
                data: DataId(1),
                size: 100_000_000,
                producer: Some(NodeId(1)),
            }],
        );
        let b = ground_truth_latency(&i, &s, &node, &cat, &LatencyModel::default(), 0.0).unwrap();
        assert!((b.transfer - 800.0).abs() < 1e-9);
    }

    #[test]
    fn full_locality_is_pure_compute() {
        let s = spec(3);
        let mut node = NodeState::new(NodeId(0), 4, 0, 1e9, 2e9);
        node.cache_deps(&s.deps, 0.0);
        node.insert_warm(&s.id, 1e9, None);
        let i = inv(&s, vec![]);
        let b = ground_truth_latency(
            &i,
            &s,
            &node,
            &DataCatalog::new(),
            &LatencyModel::default(),
            0.0,
        )
        .unwrap();
        assert_eq!((b.transfer, b.init, b.deps), (0.0, 0.0, 0.0));
        assert_eq!(b.total, b.compute);
        assert_eq!(b.compute, 100.0);
    }

    #[test]
    fn cold_node_with_34_deps() {
        let s = spec(34);
        let node = NodeState::new(NodeId(0), 4, 0, 1e9, 2e9);
        let b = ground_truth_latency(
            &inv(&s, vec![]),
            &s,
            &node,
            &DataCatalog::new(),
            &LatencyModel::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(b.init, 500.0);
        assert_eq!(b.deps, 34.0 * 150.0);
        assert_eq!(b.total, b.transfer + b.init + b.deps + b.compute);
    }

    #[test]
    fn zygote_and_local_read() {
        let s = spec(0);
        let mut cat = DataCatalog::new();
        cat.insert(DataId(1), NodeId(0), 2_000_000_000);
        let node = NodeState::new(NodeId(0), 4, 2, 1e9, 2e9);
        let i = inv(
            &s,
            vec![DataRef {
                data: DataId(1),
                size: 2_000_000_000,
                producer: Some(NodeId(0)),
            }],
        );
        let b = ground_truth_latency(&i, &s, &node, &cat, &LatencyModel::default(), 0.0).unwrap();
        assert_eq!(b.init, 80.0);
        assert!((b.transfer - 1000.0).abs() < 1e-9);
        assert_eq!(b.remote_bytes, 0);
    }

    #[test]
    fn external_input_is_remote_and_unresolved_data_errors() {
        let s = spec(0);
        let node = NodeState::new(NodeId(0), 4, 0, 1e9, 2e9);
        let ext = inv(
            &s,
            vec![DataRef {
                data: DataId(9),
                size: 125_000_000,
                producer: None,
            }],
        );
        let b = ground_truth_latency(
            &ext,
            &s,
            &node,
            &DataCatalog::new(),
            &LatencyModel::default(),
            0.0,
        )
        .unwrap();
        assert!((b.transfer - 1000.0).abs() < 1e-9);
        let dangling = inv(
            &s,
            vec![DataRef {
                data: DataId(9),
                size: 1,
                producer: Some(NodeId(3)),
            }],
        );
        assert!(matches!(
            ground_truth_latency(
                &dangling,
                &s,
                &node,
                &DataCatalog::new(),
                &LatencyModel::default(),
                0.0
            ),
            Err(SimError::UnresolvedData(DataId(9)))
        ));
    }

    #[test]
    fn contention_factor_kicks_in_above_rho() {
        let m = LatencyModel::default();
        assert_eq!(m.contention_factor(3, 4), 1.0);
        assert!((m.contention_factor(4, 4) - (1.0 + 0.5 * 0.8 / 4.0)).abs() < 1e-12);
    }
}
