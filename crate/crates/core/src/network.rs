//! Topology, per-link key pools and their ledgers.
//!
//! Pools accrue key continuously at the link's secure key rate. Accrual is
//! applied lazily whenever a link is touched, which is exact for a constant
//! rate. A link is broken while its pool sits below the reserved threshold.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qkd_rate::{secure_rate, QkdDeviceParams, RateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("link `{link}` references unknown node `{node}`")]
    UnknownNode { link: String, node: String },
    #[error("link `{0}` joins a node to itself")]
    SelfLoop(String),
    #[error("duplicate link id `{0}`")]
    DuplicateLink(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("topology is disconnected: `{0}` is unreachable from `{1}`")]
    Disconnected(String, String),
    #[error("topology needs at least two nodes")]
    TooSmall,
    #[error("link `{link}`: {reason}")]
    Pool { link: String, reason: String },
    #[error("link `{link}`: {source}")]
    Rate { link: String, source: RateError },
}

/// When a broken link becomes usable again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryPolicy {
    /// Pool back above the reserved threshold.
    Threshold,
    /// Pool refilled to its initial level.
    #[default]
    Full,
}

/// Everything needed to build one link.
#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub name: String,
    pub a: String,
    pub b: String,
    pub length_km: f64,
    pub device: QkdDeviceParams,
    pub pool_initial: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub name: String,
    pub endpoints: (NodeId, NodeId),
    pub length_km: f64,
    /// Secure key rate (bits/s).
    pub r_k: f64,
    pub pool: f64,
    pub pool_initial: f64,
    pub threshold: f64,
    pub broken: bool,
    /// Simulation time up to which accrual has been applied.
    pub synced_at: f64,
}

impl LinkState {
    pub fn other_end(&self, node: NodeId) -> NodeId {
        if self.endpoints.0 == node {
            self.endpoints.1
        } else {
            self.endpoints.0
        }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.endpoints.0 == node || self.endpoints.1 == node
    }
}

/// Cumulative key accounting for one link, all in bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyLedger {
    /// Everything the QKD device produced.
    pub generated: f64,
    /// Produced while the pool was full and therefore thrown away.
    pub discarded: f64,
    /// Spent on data packets.
    pub data: f64,
    /// Spent on routing control packets.
    pub routing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consumer {
    Data,
    Routing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConsumeError {
    #[error("link is broken")]
    LinkDown,
    #[error("insufficient key material")]
    Insufficient,
}

/// Result of a successful consumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Consumed {
    /// The pool fell below the threshold with this consumption.
    pub broke: bool,
}

const RESTORE_SLACK_BITS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Topology {
    node_names: Vec<String>,
    links: Vec<LinkState>,
    ledgers: Vec<KeyLedger>,
    adjacency: Vec<Vec<LinkId>>,
    pub recovery: RecoveryPolicy,
}

impl Topology {
    /// Validates the graph and computes every link's key rate once.
    pub fn build(nodes: &[String], specs: &[LinkSpec], recovery: RecoveryPolicy) -> Result<Self, NetworkError> {
        if nodes.len() < 2 {
            return Err(NetworkError::TooSmall);
        }
        let mut seen = HashSet::new();
        for n in nodes {
            if !seen.insert(n.as_str()) {
                return Err(NetworkError::DuplicateNode(n.clone()));
            }
        }
        let lookup = |link: &str, name: &str| {
            nodes
                .iter()
                .position(|n| n == name)
                .map(NodeId)
                .ok_or_else(|| NetworkError::UnknownNode { link: link.to_string(), node: name.to_string() })
        };

        let mut names = HashSet::new();
        let mut links = Vec::with_capacity(specs.len());
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for spec in specs {
            if !names.insert(spec.name.as_str()) {
                return Err(NetworkError::DuplicateLink(spec.name.clone()));
            }
            let a = lookup(&spec.name, &spec.a)?;
            let b = lookup(&spec.name, &spec.b)?;
            if a == b {
                return Err(NetworkError::SelfLoop(spec.name.clone()));
            }
            let pool_err = |reason: &str| NetworkError::Pool { link: spec.name.clone(), reason: reason.to_string() };
            if !(spec.threshold >= 0.0 && spec.threshold.is_finite()) {
                return Err(pool_err("threshold must be non-negative"));
            }
            if !(spec.pool_initial > spec.threshold && spec.pool_initial.is_finite()) {
                return Err(pool_err("initial pool must exceed the threshold"));
            }
            let rate = secure_rate(spec.length_km, &spec.device)
                .map_err(|source| NetworkError::Rate { link: spec.name.clone(), source })?;
            let id = LinkId(links.len());
            adjacency[a.0].push(id);
            adjacency[b.0].push(id);
            links.push(LinkState {
                name: spec.name.clone(),
                endpoints: (a, b),
                length_km: spec.length_km,
                r_k: rate.r_k,
                pool: spec.pool_initial,
                pool_initial: spec.pool_initial,
                threshold: spec.threshold,
                broken: false,
                synced_at: 0.0,
            });
        }

        let topo = Self {
            node_names: nodes.to_vec(),
            ledgers: vec![KeyLedger::default(); links.len()],
            links,
            adjacency,
            recovery,
        };
        let reach = topo.reachable_from(NodeId(0), |_| true);
        if let Some(missing) = reach.iter().position(|r| !r) {
            return Err(NetworkError::Disconnected(nodes[missing].clone(), nodes[0].clone()));
        }
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.node_names.iter().position(|n| n == name).map(NodeId)
    }

    pub fn link_id(&self, name: &str) -> Option<LinkId> {
        self.links.iter().position(|l| l.name == name).map(LinkId)
    }

    pub fn links(&self) -> &[LinkState] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &LinkState {
        &self.links[id.0]
    }

    pub fn ledger(&self, id: LinkId) -> &KeyLedger {
        &self.ledgers[id.0]
    }

    pub fn incident(&self, node: NodeId) -> &[LinkId] {
        &self.adjacency[node.0]
    }

    /// Link joining two adjacent nodes; the lowest id wins for parallel links.
    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.adjacency[a.0].iter().copied().filter(|&l| self.links[l.0].touches(b)).min()
    }

    /// Neighbors of `node` across links accepted by `usable`, sorted by id.
    pub fn neighbors(&self, node: NodeId, usable: impl Fn(LinkId) -> bool) -> Vec<(NodeId, LinkId)> {
        let mut out: Vec<_> = self.adjacency[node.0]
            .iter()
            .filter(|&&l| usable(l))
            .map(|&l| (self.links[l.0].other_end(node), l))
            .collect();
        out.sort();
        out
    }

    /// BFS reachability over links accepted by `usable`.
    pub fn reachable_from(&self, start: NodeId, usable: impl Fn(LinkId) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        seen[start.0] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &l in &self.adjacency[n.0] {
                if !usable(l) {
                    continue;
                }
                let m = self.links[l.0].other_end(n);
                if !seen[m.0] {
                    seen[m.0] = true;
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    /// Accrues `dt` seconds of key generation on one link, capped at the
    /// initial pool size.
    pub fn replenish(&mut self, id: LinkId, dt: f64) {
        if !(dt > 0.0) {
            return;
        }
        let link = &mut self.links[id.0];
        let ledger = &mut self.ledgers[id.0];
        let produced = link.r_k * dt;
        ledger.generated += produced;
        let room = link.pool_initial - link.pool;
        if produced > room {
            ledger.discarded += produced - room.max(0.0);
            link.pool = link.pool_initial.max(link.pool);
        } else {
            link.pool += produced;
        }
        link.synced_at += dt;
    }

    /// Brings one link's pool up to simulation time `now`.
    pub fn sync(&mut self, id: LinkId, now: f64) {
        let dt = now - self.links[id.0].synced_at;
        if dt > 0.0 {
            self.replenish(id, dt);
            self.links[id.0].synced_at = now;
        }
    }

    pub fn sync_all(&mut self, now: f64) {
        for i in 0..self.links.len() {
            self.sync(LinkId(i), now);
        }
    }

    /// Spends `bits` of key on one link. The last packet before breaking may
    /// dip into the reserved threshold; the pool never goes negative.
    pub fn consume(&mut self, id: LinkId, bits: f64, by: Consumer) -> Result<Consumed, ConsumeError> {
        let link = &mut self.links[id.0];
        if link.broken {
            return Err(ConsumeError::LinkDown);
        }
        if link.pool < bits {
            return Err(ConsumeError::Insufficient);
        }
        link.pool -= bits;
        let ledger = &mut self.ledgers[id.0];
        match by {
            Consumer::Data => ledger.data += bits,
            Consumer::Routing => ledger.routing += bits,
        }
        let broke = link.pool < link.threshold;
        link.broken = broke;
        Ok(Consumed { broke })
    }

    /// Pool level a broken link must regain before it carries traffic again.
    pub fn restore_target(&self, id: LinkId) -> f64 {
        let link = &self.links[id.0];
        match self.recovery {
            RecoveryPolicy::Threshold => link.threshold,
            RecoveryPolicy::Full => link.pool_initial,
        }
    }

    /// Time at which a broken link reaches its restore target, assuming it
    /// is not consumed from meanwhile.
    pub fn restore_time(&self, id: LinkId) -> Option<f64> {
        let link = &self.links[id.0];
        if !link.broken || link.r_k <= 0.0 {
            return None;
        }
        let deficit = (self.restore_target(id) - link.pool).max(0.0);
        Some(link.synced_at + deficit / link.r_k)
    }

    /// Clears the broken flag if the pool has reached the restore target.
    pub fn try_restore(&mut self, id: LinkId, now: f64) -> bool {
        self.sync(id, now);
        let target = self.restore_target(id);
        let link = &mut self.links[id.0];
        if link.broken && link.pool + RESTORE_SLACK_BITS >= target {
            link.broken = false;
            return true;
        }
        false
    }

    /// `pool - (initial + generated - discarded - data - routing)`, zero up to
    /// floating point rounding.
    pub fn ledger_residual(&self, id: LinkId) -> f64 {
        let link = &self.links[id.0];
        let l = &self.ledgers[id.0];
        link.pool - (link.pool_initial + l.generated - l.discarded - l.data - l.routing)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn spec(name: &str, a: &str, b: &str, km: f64) -> LinkSpec {
        LinkSpec {
            name: name.into(),
            a: a.into(),
            b: b.into(),
            length_km: km,
            device: QkdDeviceParams::default(),
            pool_initial: 40e6,
            threshold: 2e6,
        }
    }

    pub fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("v{i}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn pair() -> Topology {
        Topology::build(&names(2), &[spec("e1", "v1", "v2", 85.0)], RecoveryPolicy::Full).unwrap()
    }

    #[test]
    fn two_node_toy_loads() {
        let t = pair();
        assert_eq!(t.node_count(), 2);
        assert!((t.link(LinkId(0)).r_k - 231_218.0).abs() < 300.0);
    }

    #[test]
    fn validation_errors() {
        let n = names(3);
        let bad = Topology::build(&n, &[spec("e1", "v1", "v9", 1.0)], RecoveryPolicy::Full);
        assert!(matches!(bad, Err(NetworkError::UnknownNode { .. })));
        let dup = Topology::build(
            &n,
            &[spec("e1", "v1", "v2", 1.0), spec("e1", "v2", "v3", 1.0)],
            RecoveryPolicy::Full,
        );
        assert!(matches!(dup, Err(NetworkError::DuplicateLink(_))));
        let split = Topology::build(&n, &[spec("e1", "v1", "v2", 1.0)], RecoveryPolicy::Full);
        assert!(matches!(split, Err(NetworkError::Disconnected(..))));
        let looped = Topology::build(&n, &[spec("e1", "v1", "v1", 1.0)], RecoveryPolicy::Full);
        assert!(matches!(looped, Err(NetworkError::SelfLoop(_))));
        let mut s = spec("e1", "v1", "v2", 1.0);
        s.threshold = 50e6;
        assert!(matches!(Topology::build(&names(2), &[s], RecoveryPolicy::Full), Err(NetworkError::Pool { .. })));
    }

    #[test]
    fn consume_arithmetic() {
        let mut t = pair();
        let e = LinkId(0);
        assert_eq!(t.consume(e, 4000.0, Consumer::Data), Ok(Consumed { broke: false }));
        assert_eq!(t.link(e).pool, 39_996_000.0);
        assert_eq!(t.ledger(e).data, 4000.0);
    }

    #[test]
    fn threshold_crossing_breaks_link() {
        let mut t = pair();
        let e = LinkId(0);
        t.consume(e, 40e6 - 2e6 - 100.0, Consumer::Data).unwrap();
        assert_eq!(t.consume(e, 4000.0, Consumer::Data), Ok(Consumed { broke: true }));
        assert!(t.link(e).broken);
        assert_eq!(t.consume(e, 1.0, Consumer::Routing), Err(ConsumeError::LinkDown));
    }

    #[test]
    fn insufficient_when_pool_would_go_negative() {
        let mut t = Topology::build(
            &names(2),
            &[LinkSpec { threshold: 0.0, ..spec("e1", "v1", "v2", 85.0) }],
            RecoveryPolicy::Full,
        )
        .unwrap();
        let e = LinkId(0);
        t.consume(e, 40e6 - 10.0, Consumer::Data).unwrap();
        assert_eq!(t.consume(e, 4000.0, Consumer::Data), Err(ConsumeError::Insufficient));
        assert_eq!(t.link(e).pool, 10.0);
    }

    #[test]
    fn replenish_grows_then_caps() {
        let mut t = pair();
        let e = LinkId(0);
        let rk = t.link(e).r_k;
        t.consume(e, 1e6, Consumer::Data).unwrap();
        t.replenish(e, 1.0);
        assert!((t.link(e).pool - (39e6 + rk)).abs() < 1e-6);
        t.replenish(e, 0.0);
        assert!((t.link(e).pool - (39e6 + rk)).abs() < 1e-6);
        t.replenish(e, 100.0);
        assert_eq!(t.link(e).pool, 40e6);
        t.replenish(e, 5.0);
        assert_eq!(t.link(e).pool, 40e6);
        assert!(t.ledger_residual(e).abs() < 1e-6);
    }

    #[test]
    fn recovery_follows_policy() {
        for (policy, target) in [(RecoveryPolicy::Full, 40e6), (RecoveryPolicy::Threshold, 2e6)] {
            let mut t = Topology::build(&names(2), &[spec("e1", "v1", "v2", 85.0)], policy).unwrap();
            let e = LinkId(0);
            t.consume(e, 38e6 + 1.0, Consumer::Data).unwrap();
            assert!(t.link(e).broken);
            let when = t.restore_time(e).unwrap();
            let expected = (target - (2e6 - 1.0)) / t.link(e).r_k;
            assert!((when - expected).abs() < 1e-9);
            assert!(!t.try_restore(e, when * 0.99));
            assert!(t.try_restore(e, when));
            assert!(!t.link(e).broken);
            assert!(t.ledger_residual(e).abs() < 1e-6);
        }
    }
}
