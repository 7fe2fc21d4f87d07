use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{OnlinePredictor, Sample, UpdateReport};
use crate::model::{
    Catalog, DataId, FunctionId, FunctionSpec, Invocation, InvocationId, Millis, NodeId, SlaOutcome,
};
use crate::profiling::{
    assemble_features, dep_overlap, local_bytes, push_snapshot, record_observation, FeatureVector,
    History, MetricsCache, SampleLog, SampleMeta,
};
use crate::sched::{
    bs_schedule, differentiated_schedule, monitor_tick, nls_schedule, rds_recheck, rds_schedule,
    rds_timeout, Decision, DecisionLog, DecisionRecord, DelayKind, DelayState, EstimatorKind,
    MonitorResult, NodeView, Outcome, Reason, SchedError, SchedulerConfig, StrategyKind,
};
use crate::workload::Trace;

use super::{
    Audit, Cluster, ClusterConfig, EventKind, EventLog, EventQueue, LatencyBreakdown, SimError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("unknown function {0}")]
    UnknownFunction(FunctionId),
    #[error("duplicate invocation id {0}")]
    DuplicateInvocation(InvocationId),
    #[error("cluster has no nodes")]
    NoNodes,
    #[error("predictor: {0}")]
    Predictor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub cluster: ClusterConfig,
    pub scheduler: SchedulerConfig,
    pub history_alpha: f64,
    pub history_prior_ms: Millis,
    /// Metrics pushes are frequent; they are left out of the event log
    /// unless asked for.
    pub log_metrics_push: bool,
    pub replication: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            cluster: ClusterConfig::default(),
            scheduler: SchedulerConfig::default(),
            history_alpha: 0.3,
            history_prior_ms: 1000.0,
            log_metrics_push: false,
            replication: 0,
        }
    }
}

/// Where per-node execution-time estimates come from.
#[derive(Debug, Clone)]
pub enum Estimator {
    Oracle,
    Learned(Box<OnlinePredictor>),
    History,
}

impl Estimator {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Estimator::Oracle => EstimatorKind::Oracle,
            Estimator::Learned(_) => EstimatorKind::Forest,
            Estimator::History => EstimatorKind::History,
        }
    }
}

/// One completed invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub replication: u32,
    pub strategy: String,
    pub invocation: u64,
    pub function: String,
    pub workflow: String,
    pub instance: u64,
    pub stage: usize,
    pub node: u32,
    pub arrival: Millis,
    pub start: Millis,
    pub complete: Millis,
    pub end_to_end: Millis,
    pub queue_delay: Millis,
    pub transfer: Millis,
    pub init: Millis,
    pub deps: Millis,
    pub compute: Millis,
    pub total: Millis,
    pub theta: Millis,
    pub violated: bool,
    pub warm_hit: bool,
    pub predicted: Option<Millis>,
}

pub fn write_records_csv<W: Write>(records: &[InvocationRecord], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<InvocationRecord>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}

#[derive(Debug, Clone)]
struct Placed {
    start: Millis,
    breakdown: LatencyBreakdown,
    features: FeatureVector,
    predicted: Option<Millis>,
}

#[derive(Debug, Clone)]
struct Slot {
    inv: Invocation,
    outputs: Vec<(DataId, u64)>,
    workflow: String,
    instance: u64,
    stage: usize,
    placed: Option<Placed>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcomes: Vec<SlaOutcome>,
    pub records: Vec<InvocationRecord>,
    pub decisions: DecisionLog,
    pub samples: SampleLog,
    pub events: EventLog,
    pub updates: Vec<UpdateReport>,
    pub audit: Audit,
    /// Invocations that never completed (nonzero only for `run_until`).
    pub unfinished: usize,
    pub estimator: Estimator,
}

/// Deterministic single-threaded simulation of one strategy over one trace.
pub struct Engine<'a> {
    cfg: EngineConfig,
    label: String,
    catalog: &'a Catalog,
    cluster: Cluster,
    queue: EventQueue,
    now: Millis,
    slots: BTreeMap<InvocationId, Slot>,
    /// (instance, stage) -> invocations of that stage
    members: BTreeMap<(u64, usize), Vec<InvocationId>>,
    /// (instance, stage) -> predecessor invocations still running
    waiting_on: BTreeMap<(u64, usize), usize>,
    fifo: VecDeque<InvocationId>,
    delays: BTreeMap<u64, DelayState>,
    delay_of: BTreeMap<InvocationId, u64>,
    next_delay: u64,
    metrics: MetricsCache,
    history: History,
    estimator: Estimator,
    ring_cursor: usize,
    service_sum: f64,
    service_count: u64,
    remaining: usize,
    outcomes: Vec<SlaOutcome>,
    records: Vec<InvocationRecord>,
    samples: SampleLog,
    decisions: DecisionLog,
    events: EventLog,
    updates: Vec<UpdateReport>,
}

impl<'a> Engine<'a> {
    pub fn new(
        cfg: EngineConfig,
        catalog: &'a Catalog,
        trace: &Trace,
        estimator: Estimator,
    ) -> Result<Self, EngineError> {
        cfg.scheduler.validate()?;
        if cfg.cluster.nodes == 0 || cfg.cluster.cpu_slots == 0 {
            return Err(EngineError::NoNodes);
        }
        let cluster = Cluster::new(&cfg.cluster);
        let metrics = MetricsCache::new(
            cluster
                .nodes
                .iter()
                .map(|n| push_snapshot(n, 0.0, None))
                .collect(),
        );
        let mut engine = Engine {
            label: cfg.scheduler.label(),
            history: History::new(cfg.history_alpha, cfg.history_prior_ms),
            cfg,
            catalog,
            cluster,
            queue: EventQueue::new(),
            now: 0.0,
            slots: BTreeMap::new(),
            members: BTreeMap::new(),
            waiting_on: BTreeMap::new(),
            fifo: VecDeque::new(),
            delays: BTreeMap::new(),
            delay_of: BTreeMap::new(),
            next_delay: 0,
            metrics,
            estimator,
            ring_cursor: 0,
            service_sum: 0.0,
            service_count: 0,
            remaining: 0,
            outcomes: Vec::new(),
            records: Vec::new(),
            samples: SampleLog::default(),
            decisions: DecisionLog::default(),
            events: EventLog::default(),
            updates: Vec::new(),
        };
        engine.load(trace)?;
        Ok(engine)
    }

    fn load(&mut self, trace: &Trace) -> Result<(), EngineError> {
        for e in &trace.events {
            let inv = &e.invocation;
            if self.catalog.function(&inv.function).is_none() {
                return Err(EngineError::UnknownFunction(inv.function.clone()));
            }
            let slot = Slot {
                inv: inv.clone(),
                outputs: e.outputs.clone(),
                workflow: e.workflow.0.clone(),
                instance: e.instance,
                stage: e.stage,
                placed: None,
            };
            if self.slots.insert(inv.id, slot).is_some() {
                return Err(EngineError::DuplicateInvocation(inv.id));
            }
            self.members
                .entry((e.instance, e.stage))
                .or_default()
                .push(inv.id);
            if !e.gated {
                self.queue
                    .push(inv.arrival_ms, EventKind::Arrival { invocation: inv.id });
            }
        }
        for ((instance, stage), _) in self.members.clone() {
            let Some(wf) = self.workflow_of(instance, stage) else {
                continue;
            };
            let preds = &wf.stages[stage].predecessors;
            if preds.is_empty() {
                continue;
            }
            let n: usize = preds
                .iter()
                .map(|p| self.members.get(&(instance, *p)).map_or(0, Vec::len))
                .sum();
            self.waiting_on.insert((instance, stage), n);
        }
        self.remaining = self.slots.len();
        if self.remaining > 0 {
            for n in 0..self.cluster.nodes.len() as u32 {
                self.queue.push(
                    self.cfg.cluster.push_interval_ms,
                    EventKind::MetricsPush { node: NodeId(n) },
                );
            }
        }
        Ok(())
    }

    fn workflow_of(&self, instance: u64, stage: usize) -> Option<&'a crate::model::WorkflowSpec> {
        let id = self.members.get(&(instance, stage))?.first()?;
        let wf = &self.slots[id].workflow;
        self.catalog.workflow(&wf.as_str().into())
    }

    fn spec(&self, f: &FunctionId) -> &'a FunctionSpec {
        self.catalog.function(f).expect("validated at load")
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn metrics(&self) -> &MetricsCache {
        &self.metrics
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn outcomes(&self) -> &[SlaOutcome] {
        &self.outcomes
    }

    pub fn event_log(&self) -> &EventLog {
        &self.events
    }

    /// Processes every event with time ≤ `t_end`.
    pub fn run_until(&mut self, t_end: Millis) -> Result<&[SlaOutcome], EngineError> {
        while let Some(t) = self.queue.peek_time() {
            if t > t_end {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.handle(ev.kind)?;
        }
        Ok(&self.outcomes)
    }

    /// Runs to completion and hands back everything recorded.
    pub fn run(mut self) -> Result<RunResult, EngineError> {
        self.run_until(f64::INFINITY)?;
        Ok(self.finish())
    }

    pub fn finish(self) -> RunResult {
        let slots: Vec<u32> = self.cluster.nodes.iter().map(|n| n.cpu_slots).collect();
        RunResult {
            audit: self.events.audit(&slots),
            unfinished: self.remaining,
            outcomes: self.outcomes,
            records: self.records,
            decisions: self.decisions,
            samples: self.samples,
            events: self.events,
            updates: self.updates,
            estimator: self.estimator,
        }
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), EngineError> {
        self.cluster.purge_expired(self.now);
        match &kind {
            EventKind::MetricsPush { .. } => {
                if self.cfg.log_metrics_push {
                    self.events.push(self.now, &kind, String::new());
                }
            }
            EventKind::Arrival { invocation } => {
                let f = self.slots[invocation].inv.function.to_string();
                self.events.push(self.now, &kind, f);
            }
            EventKind::ContainerExpiry { function, .. } => {
                let f = function.to_string();
                self.events.push(self.now, &kind, f);
            }
            _ => {}
        }
        match kind {
            EventKind::Arrival { invocation } => {
                self.fifo.push_back(invocation);
                self.dispatch()?;
            }
            EventKind::Complete { invocation, node } => self.complete(invocation, node)?,
            EventKind::MonitorTick {
                invocation,
                generation,
            } => self.tick(invocation, generation)?,
            EventKind::MetricsPush { node } => {
                let prev = self.metrics.shared(node);
                let snap = push_snapshot(self.cluster.node(node)?, self.now, Some(&prev));
                self.metrics.push(snap);
                if self.remaining > 0 {
                    self.queue.push(
                        self.now + self.cfg.cluster.push_interval_ms,
                        EventKind::MetricsPush { node },
                    );
                }
            }
            EventKind::ContainerExpiry { .. } | EventKind::Start { .. } => {}
        }
        Ok(())
    }

    fn views(&self, inv: &Invocation, spec: &FunctionSpec) -> Vec<NodeView> {
        self.cluster
            .nodes
            .iter()
            .map(|n| {
                let snap = self.metrics.get(n.id);
                let running = n.running.len() as u32;
                NodeView {
                    id: n.id,
                    free_slots: n.cpu_slots.saturating_sub(running),
                    running,
                    local_bytes: local_bytes(inv, n.id, &self.cluster.data),
                    warm: snap.warm_count(&inv.function) > 0,
                    dep_overlap: dep_overlap(&spec.deps, &snap.dep_cache),
                }
            })
            .collect()
    }

    fn features(&self, inv: &Invocation, spec: &FunctionSpec, node: NodeId) -> FeatureVector {
        let view = self.metrics.get(node).metrics_for(spec);
        assemble_features(
            inv,
            spec,
            &view,
            &self.history,
            local_bytes(inv, node, &self.cluster.data),
        )
    }

    fn estimate(&self, inv: &Invocation, spec: &FunctionSpec, node: NodeId) -> Millis {
        match &self.estimator {
            Estimator::Oracle => self
                .cluster
                .latency(inv, spec, node, self.now)
                .map_or(f64::INFINITY, |b| b.total),
            Estimator::Learned(p) => p.predict(self.features(inv, spec, node).as_slice()),
            Estimator::History => self.history.get(&inv.function),
        }
    }

    fn estimates(&self, inv: &Invocation, spec: &FunctionSpec) -> Vec<Millis> {
        self.cluster
            .nodes
            .iter()
            .map(|n| self.estimate(inv, spec, n.id))
            .collect()
    }

    fn log_decision(
        &mut self,
        id: InvocationId,
        decision: &Decision,
        t_local: Option<Millis>,
        t_fallback: Option<Millis>,
    ) {
        let elapsed = self.now - self.slots[&id].inv.arrival_ms;
        if let Some(r) = DecisionRecord::new(
            self.cfg.replication,
            self.now,
            id,
            &self.label,
            decision,
            t_local,
            t_fallback,
            elapsed,
        ) {
            self.decisions.push(r);
        }
    }

    /// Initial decision for the invocation at the head of the queue.
    fn decide(&mut self, id: InvocationId) -> Result<Outcome, EngineError> {
        let inv = self.slots[&id].inv.clone();
        let spec = self.spec(&inv.function);
        let views = self.views(&inv, spec);
        let sc = &self.cfg.scheduler;
        Ok(match sc.strategy {
            StrategyKind::Bs => Outcome::plain(bs_schedule(&views, &mut self.ring_cursor)?),
            StrategyKind::Nls => nls_schedule(inv.predecessor_bytes(), &views, sc)?,
            StrategyKind::Rds => Outcome::plain(rds_schedule(
                &views,
                self.cfg.scheduler.rds_fallback,
                &mut self.ring_cursor,
            )?),
            StrategyKind::Differentiated => {
                let t = self.estimates(&inv, spec);
                let plan = differentiated_schedule(inv.predecessor_bytes(), &views, &t, sc)?;
                if let Some(state) =
                    plan.delay_state(id, self.now, inv.arrival_ms, spec.sla_theta_ms, sc)
                {
                    self.add_delay(state);
                }
                plan.outcome
            }
        })
    }

    fn add_delay(&mut self, state: DelayState) {
        let key = self.next_delay;
        self.next_delay += 1;
        self.delay_of.insert(state.invocation, key);
        self.delays.insert(key, state);
    }

    fn remove_delay(&mut self, id: InvocationId) {
        if let Some(k) = self.delay_of.remove(&id) {
            self.delays.remove(&k);
        }
    }

    fn schedule_tick(&mut self, id: InvocationId, at: Millis) {
        let Some(k) = self.delay_of.get(&id) else {
            return;
        };
        let s = self.delays.get_mut(k).expect("indexed");
        s.generation += 1;
        s.next_tick = at;
        let generation = s.generation;
        self.queue.push(
            at,
            EventKind::MonitorTick {
                invocation: id,
                generation,
            },
        );
    }

    fn dispatch(&mut self) -> Result<(), EngineError> {
        while let Some(&id) = self.fifo.front() {
            let out = self.decide(id)?;
            match out.decision {
                Decision::Wait => break,
                Decision::Immediate { node, .. } => {
                    self.fifo.pop_front();
                    self.log_decision(id, &out.decision, out.t_local, out.t_fallback);
                    self.place(id, node)?;
                }
                Decision::Delay { .. } => {
                    self.fifo.pop_front();
                    self.log_decision(id, &out.decision, out.t_local, out.t_fallback);
                    match self.cfg.scheduler.strategy {
                        StrategyKind::Rds => self.start_rds_delay(id),
                        _ => self.check_delayed(id)?,
                    }
                }
            }
        }
        Ok(())
    }

    fn start_rds_delay(&mut self, id: InvocationId) {
        let mean = if self.service_count > 0 {
            self.service_sum / self.service_count as f64
        } else {
            self.history.prior_ms
        };
        let d = rds_timeout(&self.cfg.scheduler, mean, self.cluster.nodes.len());
        let arrival = self.slots[&id].inv.arrival_ms;
        let timeout_at = self.now + d;
        self.add_delay(DelayState {
            invocation: id,
            kind: DelayKind::Rds,
            target: NodeId(0),
            started: self.now,
            arrival,
            theta: self.slots[&id].inv.sla_theta_ms(),
            next_tick: timeout_at,
            fallback: Vec::new(),
            other_local: Vec::new(),
            timeout_at,
            generation: 0,
        });
        self.schedule_tick(id, timeout_at);
    }

    /// Monitor check for a held invocation; places it or arms the next tick.
    fn check_delayed(&mut self, id: InvocationId) -> Result<(), EngineError> {
        let Some(&k) = self.delay_of.get(&id) else {
            return Ok(());
        };
        let state = self.delays[&k].clone();
        let inv = self.slots[&id].inv.clone();
        let spec = self.spec(&inv.function);
        let views = self.views(&inv, spec);
        match state.kind {
            DelayKind::Rds => {
                if let Some(d @ Decision::Immediate { node, .. }) = rds_recheck(
                    &views,
                    self.now,
                    state.timeout_at,
                    self.cfg.scheduler.rds_fallback,
                    &mut self.ring_cursor,
                ) {
                    self.remove_delay(id);
                    self.log_decision(id, &d, None, None);
                    self.place(id, node)?;
                }
            }
            DelayKind::Differentiated => {
                let t = if views[state.target.index()].is_free() {
                    vec![0.0; views.len()]
                } else {
                    self.estimates(&inv, spec)
                };
                match monitor_tick(&state, &views, &t, self.now, &self.cfg.scheduler)? {
                    MonitorResult::Place {
                        node,
                        reason,
                        t_fallback,
                    } => {
                        self.remove_delay(id);
                        self.log_decision(
                            id,
                            &Decision::Immediate { node, reason },
                            None,
                            t_fallback,
                        );
                        self.place(id, node)?;
                    }
                    MonitorResult::Continue { next_tick, .. } => self.schedule_tick(id, next_tick),
                }
            }
        }
        Ok(())
    }

    fn tick(&mut self, id: InvocationId, generation: u64) -> Result<(), EngineError> {
        let Some(k) = self.delay_of.get(&id) else {
            return Ok(());
        };
        if self.delays[k].generation != generation {
            return Ok(());
        }
        self.events.push(
            self.now,
            &EventKind::MonitorTick {
                invocation: id,
                generation,
            },
            String::new(),
        );
        self.check_delayed(id)
    }

    /// Re-evaluates held invocations after `node` released a slot. Only the
    /// target check runs for the predictive strategy; the tick schedule is
    /// left alone.
    fn on_release(&mut self, node: NodeId) -> Result<(), EngineError> {
        let keys: Vec<u64> = self.delays.keys().copied().collect();
        for k in keys {
            let Some(state) = self.delays.get(&k) else {
                continue;
            };
            let id = state.invocation;
            match state.kind {
                DelayKind::Differentiated => {
                    if state.target == node && self.cluster.node(node)?.has_free_slot() {
                        self.remove_delay(id);
                        let d = Decision::Immediate {
                            node,
                            reason: Reason::TargetAvailable,
                        };
                        self.log_decision(id, &d, None, None);
                        self.place(id, node)?;
                    }
                }
                DelayKind::Rds => self.check_delayed(id)?,
            }
        }
        Ok(())
    }

    fn place(&mut self, id: InvocationId, node: NodeId) -> Result<(), EngineError> {
        let inv = self.slots[&id].inv.clone();
        let spec = self.spec(&inv.function);
        let features = self.features(&inv, spec, node);
        let predicted = match (&self.estimator, self.cfg.scheduler.strategy) {
            (_, StrategyKind::Differentiated) => Some(self.estimate(&inv, spec, node)),
            (Estimator::Learned(p), _) => Some(p.predict(features.as_slice())),
            _ => None,
        };
        let p = self.cluster.place(&inv, spec, node, self.now)?;
        self.events.push(
            self.now,
            &EventKind::Start {
                invocation: id,
                node,
            },
            inv.function.to_string(),
        );
        self.queue.push(
            p.complete_at,
            EventKind::Complete {
                invocation: id,
                node,
            },
        );
        self.slots.get_mut(&id).expect("known").placed = Some(Placed {
            start: self.now,
            breakdown: p.breakdown,
            features,
            predicted,
        });
        Ok(())
    }

    fn complete(&mut self, id: InvocationId, node: NodeId) -> Result<(), EngineError> {
        let slot = self.slots[&id].clone();
        let spec = self.spec(&slot.inv.function);
        let placed = slot.placed.clone().ok_or(SimError::UnknownInvocation(id))?;
        let release = self
            .cluster
            .on_complete(id, spec, node, self.now, &slot.outputs)?;
        self.events.push(
            self.now,
            &EventKind::Complete {
                invocation: id,
                node,
            },
            slot.inv.function.to_string(),
        );
        self.queue.push(
            release.warm_expiry,
            EventKind::ContainerExpiry {
                node,
                function: release.function,
            },
        );
        self.remaining -= 1;

        let b = placed.breakdown;
        let e2e = self.now - slot.inv.arrival_ms;
        let theta = spec.sla_theta_ms;
        let outcome = SlaOutcome::new(id, e2e, theta);
        self.outcomes.push(outcome);
        self.records.push(InvocationRecord {
            replication: self.cfg.replication,
            strategy: self.label.clone(),
            invocation: id.0,
            function: slot.inv.function.to_string(),
            workflow: slot.workflow.clone(),
            instance: slot.instance,
            stage: slot.stage,
            node: node.0,
            arrival: slot.inv.arrival_ms,
            start: placed.start,
            complete: self.now,
            end_to_end: e2e,
            queue_delay: placed.start - slot.inv.arrival_ms,
            transfer: b.transfer,
            init: b.init,
            deps: b.deps,
            compute: b.compute,
            total: b.total,
            theta,
            violated: outcome.violated,
            warm_hit: b.warm_hit,
            predicted: placed.predicted,
        });
        let meta = SampleMeta {
            function: slot.inv.function.clone(),
            node,
            t: self.now,
            predicted: placed.predicted,
        };
        if let Ok(s) = record_observation(&mut self.samples, placed.features, b.total, meta) {
            if let Estimator::Learned(p) = &mut self.estimator {
                let sample = Sample {
                    x: s.features.as_slice().to_vec(),
                    y: s.actual,
                };
                if let Some(r) = p
                    .observe(sample, self.now)
                    .map_err(|e| EngineError::Predictor(e.to_string()))?
                {
                    self.updates.push(r);
                }
            }
        }
        self.history.record(&slot.inv.function, b.total);
        self.service_sum += b.total;
        self.service_count += 1;

        self.release_successors(slot.instance, slot.stage);
        self.on_release(node)?;
        self.dispatch()
    }

    fn release_successors(&mut self, instance: u64, stage: usize) {
        let Some(wf) = self.workflow_of(instance, stage) else {
            return;
        };
        for t in wf.successors(stage) {
            let Some(left) = self.waiting_on.get_mut(&(instance, t)) else {
                continue;
            };
            *left = left.saturating_sub(1);
            if *left > 0 {
                continue;
            }
            self.waiting_on.remove(&(instance, t));
            let ids = self
                .members
                .get(&(instance, t))
                .cloned()
                .unwrap_or_default();
            for id in ids {
                let now = self.now;
                let data = &self.cluster.data;
                let slot = self.slots.get_mut(&id).expect("member");
                let theta = slot.inv.sla_theta_ms();
                slot.inv.arrival_ms = now;
                slot.inv.deadline_ms = now + theta;
                for d in &mut slot.inv.predecessor_outputs {
                    d.producer = data.get(d.data).map(|e| e.node);
                }
                self.queue.push(now, EventKind::Arrival { invocation: id });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComputeDist, SizeDist, StageSpec, WorkflowSpec};
    use crate::workload::TraceEvent;

    fn catalog() -> Catalog {
        let f = FunctionSpec {
            id: "f".into(),
            deps: vec![],
            base_compute: ComputeDist {
                mean_ms: 700.0,
                cv: 0.0,
            },
            input_size: SizeDist::fixed(0.0),
            sla_theta_ms: 5000.0,
            stage: None,
        };
        let wf = WorkflowSpec {
            id: "w".into(),
            stages: vec![StageSpec {
                function: "f".into(),
                fan_out: 1,
                predecessors: vec![],
                output_ratio: 1.0,
            }],
        };
        Catalog::new(vec![f], vec![wf])
    }

    fn one_invocation(c: &Catalog) -> Trace {
        let spec = c.function(&"f".into()).unwrap();
        Trace {
            events: vec![TraceEvent {
                arrival_ms: 10.0,
                instance: 0,
                workflow: "w".into(),
                stage: 0,
                gated: false,
                invocation: Invocation::new(InvocationId(0), spec, 10.0, 0, vec![], 700.0),
                outputs: vec![],
            }],
        }
    }

    fn cfg(strategy: StrategyKind, nodes: u32) -> EngineConfig {
        EngineConfig {
            cluster: ClusterConfig {
                nodes,
                ..Default::default()
            },
            scheduler: SchedulerConfig::new(strategy),
            ..Default::default()
        }
    }

    #[test]
    fn empty_workload() {
        let c = catalog();
        let r = Engine::new(
            cfg(StrategyKind::Bs, 2),
            &c,
            &Trace::default(),
            Estimator::Oracle,
        )
        .unwrap()
        .run()
        .unwrap();
        assert!(r.outcomes.is_empty());
        assert!(r.events.records.is_empty());
    }

    #[test]
    fn single_invocation_single_node() {
        let c = catalog();
        for s in StrategyKind::ALL {
            let r = Engine::new(cfg(s, 1), &c, &one_invocation(&c), Estimator::Oracle)
                .unwrap()
                .run()
                .unwrap();
            assert_eq!(r.outcomes.len(), 1);
            // cold start plus compute, no queueing
            assert_eq!(r.outcomes[0].end_to_end_ms, 500.0 + 700.0);
            assert_eq!(r.records[0].total, r.outcomes[0].end_to_end_ms);
            assert!(r.audit.ok());
        }
    }

    #[test]
    fn run_until_stops_at_horizon() {
        let c = catalog();
        let mut e = Engine::new(
            cfg(StrategyKind::Nls, 1),
            &c,
            &one_invocation(&c),
            Estimator::Oracle,
        )
        .unwrap();
        assert!(e.run_until(1000.0).unwrap().is_empty());
        assert_eq!(e.run_until(1210.0).unwrap().len(), 1);
    }
}
