use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{DataId, FunctionId, InvocationId, Millis, NodeId};

/// Bookkeeping for an invocation occupying a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Running {
    pub function: FunctionId,
    pub started: Millis,
    pub finishes: Millis,
    /// Bytes pulled over the network and when that phase ends.
    pub remote_bytes: u64,
    pub remote_end: Millis,
    pub local_bytes: u64,
    pub local_end: Millis,
}

impl Running {
    pub fn remote_in_flight(&self, now: Millis) -> bool {
        self.remote_bytes > 0 && now < self.remote_end
    }

    fn remaining_remote(&self, now: Millis) -> f64 {
        if !self.remote_in_flight(now) {
            return 0.0;
        }
        let span = self.remote_end - self.started;
        if span <= 0.0 {
            return 0.0;
        }
        self.remote_bytes as f64 * (self.remote_end - now) / span
    }

    fn local_rate(&self, now: Millis) -> f64 {
        if self.local_bytes == 0 || now >= self.local_end {
            return 0.0;
        }
        let span = (self.local_end - self.started).max(1e-9);
        self.local_bytes as f64 / (span / 1000.0)
    }
}

/// Simulated worker node.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub cpu_slots: u32,
    pub running: BTreeMap<InvocationId, Running>,
    /// Per-function warm containers, stored as expiry timestamps.
    pub warm_pool: BTreeMap<FunctionId, Vec<Millis>>,
    pub zygotes: u32,
    /// Cached packages and the time each was (last) inserted. Shared with
    /// metric snapshots; copy-on-write on mutation.
    pub dep_cache: Arc<BTreeMap<String, Millis>>,
    /// Network link, bits per second.
    pub bandwidth_bps: f64,
    /// Intra-node data access, bytes per second.
    pub local_bandwidth: f64,
}

impl NodeState {
    pub fn new(
        id: NodeId,
        cpu_slots: u32,
        zygotes: u32,
        bandwidth_bps: f64,
        local_bandwidth: f64,
    ) -> Self {
        NodeState {
            id,
            cpu_slots,
            running: BTreeMap::new(),
            warm_pool: BTreeMap::new(),
            zygotes,
            dep_cache: Arc::new(BTreeMap::new()),
            bandwidth_bps,
            local_bandwidth,
        }
    }

    pub fn has_free_slot(&self) -> bool {
        (self.running.len() as u32) < self.cpu_slots
    }

    pub fn warm_count(&self, function: &FunctionId) -> usize {
        self.warm_pool.get(function).map_or(0, Vec::len)
    }

    pub fn total_warm(&self) -> usize {
        self.warm_pool.values().map(Vec::len).sum()
    }

    /// Drops warm containers (and, with a TTL, cached packages) whose expiry
    /// is at or before `now`.
    pub fn purge_expired(&mut self, now: Millis, dep_cache_ttl: Option<Millis>) {
        self.warm_pool.retain(|_, exp| {
            exp.retain(|&e| e > now);
            !exp.is_empty()
        });
        if let Some(ttl) = dep_cache_ttl {
            if self.dep_cache.values().any(|&t| t + ttl <= now) {
                Arc::make_mut(&mut self.dep_cache).retain(|_, t| *t + ttl > now);
            }
        }
    }

    /// Takes the freshest warm container for `function`, if any.
    pub fn take_warm(&mut self, function: &FunctionId) -> bool {
        let Some(pool) = self.warm_pool.get_mut(function) else {
            return false;
        };
        let Some((idx, _)) = pool.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
            return false;
        };
        pool.swap_remove(idx);
        if pool.is_empty() {
            self.warm_pool.remove(function);
        }
        true
    }

    pub fn insert_warm(&mut self, function: &FunctionId, expiry: Millis, cap: Option<u32>) {
        let pool = self.warm_pool.entry(function.clone()).or_default();
        pool.push(expiry);
        if let Some(cap) = cap {
            while pool.len() > cap as usize {
                let (idx, _) = pool
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("non-empty pool");
                pool.swap_remove(idx);
            }
        }
        if pool.is_empty() {
            self.warm_pool.remove(function);
        }
    }

    pub fn cache_deps<'a>(&mut self, deps: impl IntoIterator<Item = &'a String>, now: Millis) {
        let cache = Arc::make_mut(&mut self.dep_cache);
        for d in deps {
            cache.insert(d.clone(), now);
        }
    }

    pub fn active_remote_transfers(&self, now: Millis) -> usize {
        self.running
            .values()
            .filter(|r| r.remote_in_flight(now))
            .count()
    }

    pub fn pending_transfer_bytes(&self, now: Millis) -> f64 {
        self.running.values().map(|r| r.remaining_remote(now)).sum()
    }

    /// Local read throughput in progress, bytes per second.
    pub fn local_read_rate(&self, now: Millis) -> f64 {
        self.running.values().map(|r| r.local_rate(now)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub node: NodeId,
    pub size: u64,
}

/// Where every intermediate object lives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataCatalog {
    entries: BTreeMap<DataId, CatalogEntry>,
}

impl DataCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: DataId, node: NodeId, size: u64) {
        self.entries.insert(id, CatalogEntry { node, size });
    }

    pub fn get(&self, id: DataId) -> Option<CatalogEntry> {
        self.entries.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_pool_take_and_expire() {
        let mut n = NodeState::new(NodeId(0), 2, 0, 1e9, 2e9);
        let f = FunctionId::from("f");
        n.insert_warm(&f, 100.0, None);
        n.insert_warm(&f, 200.0, None);
        assert_eq!(n.warm_count(&f), 2);
        n.purge_expired(100.0, None);
        assert_eq!(n.warm_count(&f), 1);
        assert!(n.take_warm(&f));
        assert!(!n.take_warm(&f));
        assert!(n.warm_pool.is_empty());
    }

    #[test]
    fn warm_pool_cap_evicts_oldest() {
        let mut n = NodeState::new(NodeId(0), 2, 0, 1e9, 2e9);
        let f = FunctionId::from("f");
        for e in [30.0, 10.0, 20.0] {
            n.insert_warm(&f, e, Some(2));
        }
        let mut left = n.warm_pool[&f].clone();
        left.sort_by(f64::total_cmp);
        assert_eq!(left, vec![20.0, 30.0]);
    }

    #[test]
    fn dep_cache_ttl() {
        let mut n = NodeState::new(NodeId(0), 2, 0, 1e9, 2e9);
        let deps = vec!["a".to_string(), "b".to_string()];
        n.cache_deps(&deps, 0.0);
        n.cache_deps(&deps[..1], 50.0);
        n.purge_expired(100.0, Some(100.0));
        assert_eq!(n.dep_cache.keys().collect::<Vec<_>>(), vec!["a"]);
    }
}
