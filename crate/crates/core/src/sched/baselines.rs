use crate::model::{Millis, NodeId};

use super::{
    classify_nodes, Decision, NodeView, Outcome, RdsFallback, Reason, SchedError, SchedulerConfig,
};

/// Free node with the fewest running invocations, ties to the lowest id.
pub fn least_loaded_free<'a>(views: impl IntoIterator<Item = &'a NodeView>) -> Option<NodeId> {
    views
        .into_iter()
        .filter(|v| v.is_free())
        .min_by_key(|v| (v.running, v.id))
        .map(|v| v.id)
}

/// The node under the cursor, or the next free one in ring order. The
/// cursor advances only when a node is returned.
pub fn ring_next_free(views: &[NodeView], cursor: &mut usize) -> Option<NodeId> {
    let n = views.len();
    if n == 0 {
        return None;
    }
    let start = *cursor % n;
    let node = (0..n)
        .map(|k| &views[(start + k) % n])
        .find(|v| v.is_free())?;
    *cursor = cursor.wrapping_add(1);
    Some(node.id)
}

/// Round robin: the node under the cursor, or the next free one in ring
/// order. The cursor advances once per placed invocation.
pub fn bs_schedule(views: &[NodeView], cursor: &mut usize) -> Result<Decision, SchedError> {
    if views.is_empty() {
        return Err(SchedError::NoNodes);
    }
    Ok(match ring_next_free(views, cursor) {
        Some(node) => Decision::Immediate {
            node,
            reason: Reason::RoundRobin,
        },
        None => Decision::Wait,
    })
}

fn next_available(views: &[NodeView], policy: RdsFallback, cursor: &mut usize) -> Option<NodeId> {
    match policy {
        RdsFallback::RoundRobin => ring_next_free(views, cursor),
        RdsFallback::LeastLoaded => least_loaded_free(views),
    }
}

/// Best free local node by score, otherwise the least loaded free fallback.
/// Never delays.
pub fn nls_schedule(
    predecessor_bytes: u64,
    views: &[NodeView],
    cfg: &SchedulerConfig,
) -> Result<Outcome, SchedError> {
    let c = classify_nodes(predecessor_bytes, views, cfg)?;
    let best_local = c
        .local
        .iter()
        .filter(|(n, _)| views[n.index()].is_free())
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(n, _)| *n);
    let decision = if let Some(node) = best_local {
        Decision::Immediate {
            node,
            reason: Reason::LocalFree,
        }
    } else {
        let reason = if c.local.is_empty() {
            Reason::NoLocal
        } else {
            Reason::LocalBusy
        };
        match least_loaded_free(c.fallback.iter().map(|n| &views[n.index()])) {
            Some(node) => Decision::Immediate { node, reason },
            None => Decision::Wait,
        }
    };
    Ok(Outcome::plain(decision))
}

fn best_data_local(views: &[NodeView]) -> Option<NodeId> {
    views
        .iter()
        .filter(|v| v.local_bytes > 0 && v.is_free())
        .max_by(|a, b| a.local_bytes.cmp(&b.local_bytes).then(b.id.cmp(&a.id)))
        .map(|v| v.id)
}

/// Rule-based delay: data locality only. Places on a free data-local node,
/// delays while data-local nodes are busy, and places immediately when no
/// node holds any input. Locality-free placements go to the next available
/// node under `policy`.
pub fn rds_schedule(
    views: &[NodeView],
    policy: RdsFallback,
    cursor: &mut usize,
) -> Result<Decision, SchedError> {
    if views.is_empty() {
        return Err(SchedError::NoNodes);
    }
    if let Some(node) = best_data_local(views) {
        return Ok(Decision::Immediate {
            node,
            reason: Reason::DataLocalFree,
        });
    }
    if views.iter().any(|v| v.local_bytes > 0) {
        return Ok(Decision::Delay {
            target: None,
            reason: Reason::DelayForLocality,
        });
    }
    Ok(match next_available(views, policy, cursor) {
        Some(node) => Decision::Immediate {
            node,
            reason: Reason::NoLocal,
        },
        None => Decision::Wait,
    })
}

/// Re-check of a held RDS invocation, on a release or at its timeout.
/// Returns `None` to keep waiting.
pub fn rds_recheck(
    views: &[NodeView],
    now: Millis,
    timeout_at: Millis,
    policy: RdsFallback,
    cursor: &mut usize,
) -> Option<Decision> {
    if let Some(node) = best_data_local(views) {
        return Some(Decision::Immediate {
            node,
            reason: Reason::DataLocalFree,
        });
    }
    if now >= timeout_at {
        return next_available(views, policy, cursor).map(|node| Decision::Immediate {
            node,
            reason: Reason::DelayTimeout,
        });
    }
    None
}

/// Delay timeout `D`: the configured value, or
/// `factor * mean service time * ln(nodes)`.
pub fn rds_timeout(cfg: &SchedulerConfig, mean_service_ms: Millis, nodes: usize) -> Millis {
    cfg.rds_timeout_ms
        .unwrap_or_else(|| cfg.rds_timeout_factor * mean_service_ms * (nodes.max(1) as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::tests::view;

    fn idle(n: u32) -> Vec<NodeView> {
        (0..n).map(|i| view(i, 1, 0, false, 0.0)).collect()
    }

    fn node(d: Decision) -> NodeId {
        match d {
            Decision::Immediate { node, .. } => node,
            other => panic!("expected immediate, got {other:?}"),
        }
    }

    #[test]
    fn bs_ring_and_skip() {
        let mut cursor = 0;
        let v = idle(3);
        let picks: Vec<u32> = (0..3)
            .map(|_| node(bs_schedule(&v, &mut cursor).unwrap()).0)
            .collect();
        assert_eq!(picks, vec![0, 1, 2]);
        let mut v = idle(3);
        v[1].free_slots = 0;
        let mut cursor = 1;
        assert_eq!(node(bs_schedule(&v, &mut cursor).unwrap()), NodeId(2));
        assert_eq!(cursor, 2);
        let mut one = idle(1);
        let mut c = 0;
        assert_eq!(node(bs_schedule(&one, &mut c).unwrap()), NodeId(0));
        one[0].free_slots = 0;
        assert_eq!(bs_schedule(&one, &mut c).unwrap(), Decision::Wait);
        assert_eq!(c, 1);
    }

    #[test]
    fn nls_prefers_free_local_then_fallback() {
        let cfg = SchedulerConfig::default();
        let v = vec![view(0, 1, 0, false, 0.0), view(1, 1, 100, false, 0.0)];
        let o = nls_schedule(100, &v, &cfg).unwrap();
        assert_eq!(
            o.decision,
            Decision::Immediate {
                node: NodeId(1),
                reason: Reason::LocalFree
            }
        );
        let v = vec![view(0, 1, 0, false, 0.0), view(1, 0, 100, false, 0.0)];
        let o = nls_schedule(100, &v, &cfg).unwrap();
        assert_eq!(
            o.decision,
            Decision::Immediate {
                node: NodeId(0),
                reason: Reason::LocalBusy
            }
        );
    }

    #[test]
    fn nls_without_locality_matches_least_loaded() {
        let cfg = SchedulerConfig::default();
        let mut v = idle(3);
        v[0].running = 2;
        v[1].running = 1;
        v[2].running = 1;
        let o = nls_schedule(0, &v, &cfg).unwrap();
        assert_eq!(node(o.decision), least_loaded_free(&v).unwrap());
        assert_eq!(node(o.decision), NodeId(1));
    }

    #[test]
    fn rds_state_machine() {
        let mut v = vec![view(0, 0, 100, false, 0.0), view(1, 1, 0, true, 1.0)];
        let (ll, mut c) = (RdsFallback::LeastLoaded, 0);
        assert_eq!(
            rds_schedule(&v, ll, &mut c).unwrap(),
            Decision::Delay {
                target: None,
                reason: Reason::DelayForLocality
            }
        );
        assert_eq!(rds_recheck(&v, 200.0, 5000.0, ll, &mut c), None);
        v[0].free_slots = 1;
        assert_eq!(
            rds_recheck(&v, 300.0, 5000.0, ll, &mut c),
            Some(Decision::Immediate {
                node: NodeId(0),
                reason: Reason::DataLocalFree
            })
        );
        v[0].free_slots = 0;
        assert_eq!(
            rds_recheck(&v, 5000.0, 5000.0, ll, &mut c),
            Some(Decision::Immediate {
                node: NodeId(1),
                reason: Reason::DelayTimeout
            })
        );
        assert_eq!(node(rds_schedule(&idle(2), ll, &mut c).unwrap()), NodeId(0));
        assert_eq!(node(rds_schedule(&idle(2), ll, &mut c).unwrap()), NodeId(0));
    }

    #[test]
    fn rds_round_robin_fallback_rotates() {
        let mut c = 0;
        let picks: Vec<NodeId> = (0..3)
            .map(|_| node(rds_schedule(&idle(2), RdsFallback::RoundRobin, &mut c).unwrap()))
            .collect();
        assert_eq!(picks, vec![NodeId(0), NodeId(1), NodeId(0)]);
    }

    #[test]
    fn rds_timeout_default_formula() {
        let cfg = SchedulerConfig::default();
        let d = rds_timeout(&cfg, 1000.0, 10);
        assert!((d - 1.5 * 1000.0 * 10f64.ln()).abs() < 1e-9);
        let fixed = SchedulerConfig {
            rds_timeout_ms: Some(5000.0),
            ..cfg
        };
        assert_eq!(rds_timeout(&fixed, 1000.0, 10), 5000.0);
    }
}
