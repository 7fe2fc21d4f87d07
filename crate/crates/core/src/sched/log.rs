use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::{InvocationId, Millis, NodeId};

use super::{Decision, Reason};

/// One row of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub replication: u32,
    pub t: Millis,
    pub invocation: u64,
    pub strategy: String,
    /// `immediate` or `delay`.
    pub action: String,
    pub reason: String,
    pub node: Option<u32>,
    pub t_local: Option<Millis>,
    pub t_fallback: Option<Millis>,
    pub elapsed: Millis,
}

impl DecisionRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        replication: u32,
        t: Millis,
        invocation: InvocationId,
        strategy: &str,
        decision: &Decision,
        t_local: Option<Millis>,
        t_fallback: Option<Millis>,
        elapsed: Millis,
    ) -> Option<Self> {
        let (action, reason, node): (&str, Reason, Option<NodeId>) = match *decision {
            Decision::Immediate { node, reason } => ("immediate", reason, Some(node)),
            Decision::Delay { target, reason } => ("delay", reason, target),
            Decision::Wait => return None,
        };
        Some(DecisionRecord {
            replication,
            t,
            invocation: invocation.0,
            strategy: strategy.to_string(),
            action: action.to_string(),
            reason: reason.tag().to_string(),
            node: node.map(|n| n.0),
            t_local,
            t_fallback,
            elapsed,
        })
    }

    pub fn is_immediate(&self) -> bool {
        self.action == "immediate"
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionLog {
    pub records: Vec<DecisionRecord>,
}

impl DecisionLog {
    pub fn push(&mut self, r: DecisionRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Count of terminal (immediate) decisions per reason tag.
    pub fn reason_histogram(&self) -> BTreeMap<String, u64> {
        let mut h = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.is_immediate()) {
            *h.entry(r.reason.clone()).or_insert(0) += 1;
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, csv::Error> {
        let mut rd = csv::Reader::from_reader(r);
        let records = rd
            .deserialize()
            .collect::<Result<Vec<DecisionRecord>, _>>()?;
        Ok(DecisionLog { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_histogram() {
        let mut log = DecisionLog::default();
        let d = Decision::Delay {
            target: Some(NodeId(2)),
            reason: Reason::DelayForLocality,
        };
        log.push(
            DecisionRecord::new(
                0,
                1.5,
                InvocationId(7),
                "differentiated",
                &d,
                Some(500.0),
                Some(1000.0),
                0.0,
            )
            .unwrap(),
        );
        let d = Decision::Immediate {
            node: NodeId(2),
            reason: Reason::TargetAvailable,
        };
        log.push(
            DecisionRecord::new(
                0,
                101.5,
                InvocationId(7),
                "differentiated",
                &d,
                None,
                None,
                100.0,
            )
            .unwrap(),
        );
        assert!(DecisionRecord::new(
            0,
            0.0,
            InvocationId(1),
            "bs",
            &Decision::Wait,
            None,
            None,
            0.0
        )
        .is_none());
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = DecisionLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.reason_histogram().get("target-available"), Some(&1));
        assert_eq!(back.reason_histogram().len(), 1);
    }
}
