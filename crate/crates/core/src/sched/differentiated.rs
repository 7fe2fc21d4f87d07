use crate::model::{InvocationId, Millis, NodeId};

use super::{
    argmin, classify_nodes, Decision, DelayKind, DelayState, NodeClassification, NodeView, Outcome,
    Reason, SchedError, SchedulerConfig,
};

fn check_len(views: &[NodeView], t: &[Millis]) -> Result<(), SchedError> {
    if views.is_empty() {
        return Err(SchedError::NoNodes);
    }
    if t.len() != views.len() {
        return Err(SchedError::PredictionLength {
            nodes: views.len(),
            got: t.len(),
        });
    }
    Ok(())
}

/// Free nodes able to take the invocation right now instead of the local
/// target: free fallback nodes, or, when there are none, the other free local
/// nodes.
fn pool(fallback: &[NodeId], other_local: &[NodeId], views: &[NodeView]) -> Vec<NodeId> {
    let free = |ids: &[NodeId]| -> Vec<NodeId> {
        ids.iter()
            .copied()
            .filter(|n| views[n.index()].is_free())
            .collect()
    };
    let p = free(fallback);
    if p.is_empty() {
        free(other_local)
    } else {
        p
    }
}

/// Result of the initial placement step.
#[derive(Debug, Clone, PartialEq)]
pub struct Planned {
    pub outcome: Outcome,
    pub classification: NodeClassification,
}

impl Planned {
    /// Delay state for a `Delay` outcome.
    pub fn delay_state(
        &self,
        invocation: InvocationId,
        now: Millis,
        arrival: Millis,
        theta: Millis,
        cfg: &SchedulerConfig,
    ) -> Option<DelayState> {
        let Decision::Delay {
            target: Some(target),
            ..
        } = self.outcome.decision
        else {
            return None;
        };
        Some(DelayState {
            invocation,
            kind: DelayKind::Differentiated,
            target,
            started: now,
            arrival,
            theta,
            next_tick: now + cfg.monitor_interval_ms,
            fallback: self.classification.fallback.iter().copied().collect(),
            other_local: self
                .classification
                .local
                .keys()
                .copied()
                .filter(|&n| n != target)
                .collect(),
            timeout_at: f64::INFINITY,
            generation: 0,
        })
    }
}

/// Delay-or-place step for one invocation.
///
/// `t[i]` is the predicted execution time on node `i`. Busy fallback nodes
/// cannot take the invocation and count as unavailable for `T_f`.
pub fn differentiated_schedule(
    predecessor_bytes: u64,
    views: &[NodeView],
    t: &[Millis],
    cfg: &SchedulerConfig,
) -> Result<Planned, SchedError> {
    check_len(views, t)?;
    let classification = classify_nodes(predecessor_bytes, views, cfg)?;
    let fallback: Vec<NodeId> = classification.fallback.iter().copied().collect();

    let local = argmin(classification.local.keys().copied(), t);
    let other_local: Vec<NodeId> = match local {
        Some((target, _)) => classification
            .local
            .keys()
            .copied()
            .filter(|&n| n != target)
            .collect(),
        None => Vec::new(),
    };
    let candidates = pool(&fallback, &other_local, views);
    let best_fallback = argmin(candidates.iter().copied(), t);
    let t_local = local.map(|(_, v)| v);
    let t_fallback = best_fallback.map(|(_, v)| v);

    let decision = match (local, best_fallback) {
        (None, Some((node, _))) => Decision::Immediate {
            node,
            reason: Reason::NoLocal,
        },
        (None, None) => Decision::Wait,
        (Some((_, tl)), Some((node, tf))) if tl >= tf * cfg.alpha => Decision::Immediate {
            node,
            reason: Reason::BenefitInsufficient,
        },
        (Some((target, _)), _) => Decision::Delay {
            target: Some(target),
            reason: Reason::DelayForLocality,
        },
    };
    Ok(Planned {
        outcome: Outcome {
            decision,
            t_local,
            t_fallback,
        },
        classification,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonitorResult {
    Place {
        node: NodeId,
        reason: Reason,
        t_fallback: Option<Millis>,
    },
    Continue {
        t_fallback: Option<Millis>,
        next_tick: Millis,
    },
}

/// One check of a held invocation.
///
/// Places it on the target when the target has a free slot. Otherwise
/// forces it onto the best free fallback node once no fallback node leaves a
/// positive budget `θ(1−β) − elapsed − T[node]`. With `charge_elapsed` off
/// the elapsed term is dropped. When no alternative node is free the
/// invocation keeps waiting.
pub fn monitor_tick(
    state: &DelayState,
    views: &[NodeView],
    t: &[Millis],
    now: Millis,
    cfg: &SchedulerConfig,
) -> Result<MonitorResult, SchedError> {
    check_len(views, t)?;
    if views
        .get(state.target.index())
        .is_some_and(NodeView::is_free)
    {
        return Ok(MonitorResult::Place {
            node: state.target,
            reason: Reason::TargetAvailable,
            t_fallback: None,
        });
    }
    let next_tick = now + cfg.monitor_interval_ms;
    let candidates = pool(&state.fallback, &state.other_local, views);
    let Some((best, tf)) = argmin(candidates.iter().copied(), t) else {
        return Ok(MonitorResult::Continue {
            t_fallback: None,
            next_tick,
        });
    };
    let elapsed = if cfg.charge_elapsed {
        now - state.arrival
    } else {
        0.0
    };
    let budget = state.theta * (1.0 - cfg.beta) - elapsed;
    let violation = candidates.iter().all(|n| budget - t[n.index()] <= 0.0);
    if violation {
        Ok(MonitorResult::Place {
            node: best,
            reason: Reason::SlaForcedFallback,
            t_fallback: Some(tf),
        })
    } else {
        Ok(MonitorResult::Continue {
            t_fallback: Some(tf),
            next_tick,
        })
    }
}
