use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::model::{FunctionId, InvocationId, Millis, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Arrival {
        invocation: InvocationId,
    },
    Start {
        invocation: InvocationId,
        node: NodeId,
    },
    Complete {
        invocation: InvocationId,
        node: NodeId,
    },
    ContainerExpiry {
        node: NodeId,
        function: FunctionId,
    },
    MetricsPush {
        node: NodeId,
    },
    MonitorTick {
        invocation: InvocationId,
        generation: u64,
    },
}

impl EventKind {
    /// Tie-break rank among events at the same timestamp. Completions go
    /// first so freed slots are visible to arrivals at the same instant.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::Complete { .. } => 0,
            EventKind::ContainerExpiry { .. } => 1,
            EventKind::MetricsPush { .. } => 2,
            EventKind::Arrival { .. } => 3,
            EventKind::Start { .. } => 4,
            EventKind::MonitorTick { .. } => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Arrival { .. } => "arrival",
            EventKind::Start { .. } => "start",
            EventKind::Complete { .. } => "complete",
            EventKind::ContainerExpiry { .. } => "container_expiry",
            EventKind::MetricsPush { .. } => "metrics_push",
            EventKind::MonitorTick { .. } => "monitor_tick",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: Millis,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed so that BinaryHeap pops the earliest (time, rank, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.kind.rank().cmp(&self.kind.rank()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: Millis, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<Millis> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// One line of the exported event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: Millis,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invocation: Option<InvocationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
}

/// Result of replaying an event log for conservation and admission checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub arrivals: usize,
    pub starts: usize,
    pub completions: usize,
    pub max_occupancy: u32,
    /// Completion without a matching start, or a duplicate arrival.
    pub inconsistencies: usize,
    pub slot_violations: usize,
}

impl Audit {
    pub fn ok(&self) -> bool {
        self.arrivals == self.completions
            && self.starts == self.completions
            && self.inconsistencies == 0
            && self.slot_violations == 0
    }
}

impl EventLog {
    pub fn push(&mut self, t: Millis, kind: &EventKind, detail: String) {
        let (invocation, node) = match kind {
            EventKind::Arrival { invocation } => (Some(*invocation), None),
            EventKind::Start { invocation, node } | EventKind::Complete { invocation, node } => {
                (Some(*invocation), Some(*node))
            }
            EventKind::ContainerExpiry { node, .. } | EventKind::MetricsPush { node } => {
                (None, Some(*node))
            }
            EventKind::MonitorTick { invocation, .. } => (Some(*invocation), None),
        };
        self.records.push(LogRecord {
            t,
            kind: kind.name().to_string(),
            invocation,
            node,
            detail,
        });
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(io::Error::other)?);
        }
        Ok(EventLog { records })
    }

    /// Replays start/complete records per node and counts arrivals.
    pub fn audit(&self, cpu_slots: &[u32]) -> Audit {
        let mut arrived = BTreeMap::new();
        let mut running: BTreeMap<InvocationId, NodeId> = BTreeMap::new();
        let mut occupancy = vec![0u32; cpu_slots.len()];
        let mut a = Audit {
            arrivals: 0,
            starts: 0,
            completions: 0,
            max_occupancy: 0,
            inconsistencies: 0,
            slot_violations: 0,
        };
        for r in &self.records {
            match r.kind.as_str() {
                "arrival" => {
                    a.arrivals += 1;
                    if arrived.insert(r.invocation, ()).is_some() {
                        a.inconsistencies += 1;
                    }
                }
                "start" => {
                    a.starts += 1;
                    let (Some(inv), Some(node)) = (r.invocation, r.node) else {
                        a.inconsistencies += 1;
                        continue;
                    };
                    if running.insert(inv, node).is_some() || !arrived.contains_key(&Some(inv)) {
                        a.inconsistencies += 1;
                    }
                    let Some(o) = occupancy.get_mut(node.index()) else {
                        a.inconsistencies += 1;
                        continue;
                    };
                    *o += 1;
                    a.max_occupancy = a.max_occupancy.max(*o);
                    if *o > cpu_slots[node.index()] {
                        a.slot_violations += 1;
                    }
                }
                "complete" => {
                    a.completions += 1;
                    match r.invocation.and_then(|i| running.remove(&i)) {
                        Some(node) if Some(node) == r.node => occupancy[node.index()] -= 1,
                        _ => a.inconsistencies += 1,
                    }
                }
                _ => {}
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_orders_by_time_then_rank_then_seq() {
        let mut q = EventQueue::new();
        q.push(
            10.0,
            EventKind::Arrival {
                invocation: InvocationId(1),
            },
        );
        q.push(
            10.0,
            EventKind::Complete {
                invocation: InvocationId(2),
                node: NodeId(0),
            },
        );
        q.push(
            5.0,
            EventKind::MonitorTick {
                invocation: InvocationId(3),
                generation: 0,
            },
        );
        q.push(
            10.0,
            EventKind::Arrival {
                invocation: InvocationId(4),
            },
        );
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.time, e.kind.name(), e.seq))
            .collect();
        assert_eq!(
            order,
            vec![
                (5.0, "monitor_tick", 2),
                (10.0, "complete", 1),
                (10.0, "arrival", 0),
                (10.0, "arrival", 3)
            ]
        );
    }

    #[test]
    fn audit_flags_over_admission() {
        let mut log = EventLog::default();
        for i in 0..2 {
            log.push(
                0.0,
                &EventKind::Arrival {
                    invocation: InvocationId(i),
                },
                String::new(),
            );
            log.push(
                0.0,
                &EventKind::Start {
                    invocation: InvocationId(i),
                    node: NodeId(0),
                },
                String::new(),
            );
        }
        let a = log.audit(&[1]);
        assert_eq!(a.slot_violations, 1);
        assert!(!a.ok());
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        assert_eq!(EventLog::read_jsonl(&buf[..]).unwrap(), log);
    }
}
