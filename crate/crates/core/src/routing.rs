//! Proactive distance-vector routing with destination sequence numbers.
//!
//! Every node periodically bumps its own (even) sequence number and sends a
//! full dump of its table to each neighbor. All dumps of one round are taken
//! from a snapshot and delivered together, so a round is one synchronous
//! Bellman-Ford step. A broken link triggers incremental updates that
//! advertise the lost destinations with an odd sequence number and infinite
//! metric. Every update is OTP encrypted and charged to the key pool of the
//! link it crosses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::network::{Consumer, LinkId, NodeId, Topology};

pub const INFINITE_METRIC: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    /// Full-dump period (s).
    pub period: f64,
    pub entry_bytes: u32,
    pub header_bytes: u32,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self { period: 2.56, entry_bytes: 12, header_bytes: 8 }
    }
}

impl RoutingConfig {
    pub fn update_bits(&self, entries: usize) -> f64 {
        8.0 * (self.header_bytes as f64 + self.entry_bytes as f64 * entries as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub destination: NodeId,
    /// `None` for the node itself and for unreachable destinations.
    pub next_hop: Option<NodeId>,
    pub via_link: Option<LinkId>,
    pub metric: u32,
    pub sequence: u64,
}

impl RouteEntry {
    pub fn is_reachable(&self) -> bool {
        self.metric != INFINITE_METRIC
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdvertisedRoute {
    pub destination: NodeId,
    pub metric: u32,
    pub sequence: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Periodic,
    Triggered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingUpdate {
    pub origin: NodeId,
    pub kind: UpdateKind,
    pub entries: Vec<AdvertisedRoute>,
    pub size_bits: f64,
}

/// One routing update sent across one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub bits: f64,
    pub kind: UpdateKind,
}

/// Transmissions made by one routing action and the links they broke.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoutingActivity {
    pub sent: Vec<Transmission>,
    pub broke: Vec<LinkId>,
}

impl RoutingActivity {
    fn absorb(&mut self, other: RoutingActivity) {
        self.sent.extend(other.sent);
        self.broke.extend(other.broke);
    }

    pub fn bits(&self) -> f64 {
        self.sent.iter().map(|t| t.bits).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkChange {
    Broken,
    Restored,
}

#[derive(Debug, Clone)]
pub struct Dsdv {
    config: RoutingConfig,
    /// `tables[node][destination]`
    tables: Vec<Vec<RouteEntry>>,
}

impl Dsdv {
    pub fn new(nodes: usize, config: RoutingConfig) -> Self {
        let tables = (0..nodes)
            .map(|owner| {
                (0..nodes)
                    .map(|d| RouteEntry {
                        destination: NodeId(d),
                        next_hop: None,
                        via_link: None,
                        metric: if d == owner { 0 } else { INFINITE_METRIC },
                        sequence: 0,
                    })
                    .collect()
            })
            .collect();
        Self { config, tables }
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.config
    }

    pub fn table(&self, node: NodeId) -> &[RouteEntry] {
        &self.tables[node.0]
    }

    pub fn entry(&self, node: NodeId, destination: NodeId) -> &RouteEntry {
        &self.tables[node.0][destination.0]
    }

    /// Next hop and the link to use, or `None` when there is no route.
    pub fn next_hop(&self, node: NodeId, destination: NodeId) -> Option<(NodeId, LinkId)> {
        debug_assert_ne!(node, destination, "next_hop asked for a route to self");
        let e = &self.tables[node.0][destination.0];
        match (e.is_reachable(), e.next_hop, e.via_link) {
            (true, Some(n), Some(l)) => Some((n, l)),
            _ => None,
        }
    }

    /// Links followed from `src` to `dst`, or `None` on a missing route or a
    /// forwarding loop.
    pub fn path_links(&self, src: NodeId, dst: NodeId) -> Option<Vec<LinkId>> {
        let mut at = src;
        let mut links = Vec::new();
        while at != dst {
            if links.len() >= self.tables.len() {
                return None;
            }
            let (next, link) = self.next_hop(at, dst)?;
            links.push(link);
            at = next;
        }
        Some(links)
    }

    pub fn path_nodes(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let mut nodes = vec![src];
        let mut at = src;
        while at != dst {
            if nodes.len() > self.tables.len() {
                return None;
            }
            at = self.next_hop(at, dst)?.0;
            nodes.push(at);
        }
        Some(nodes)
    }

    fn full_dump(&self, node: NodeId) -> RoutingUpdate {
        let entries: Vec<_> = self.tables[node.0]
            .iter()
            .filter(|e| e.is_reachable() || e.sequence > 0)
            .map(|e| AdvertisedRoute { destination: e.destination, metric: e.metric, sequence: e.sequence })
            .collect();
        RoutingUpdate {
            origin: node,
            kind: UpdateKind::Periodic,
            size_bits: self.config.update_bits(entries.len()),
            entries,
        }
    }

    /// Applies an advertisement heard from `from` over `link`. Returns the
    /// destinations whose entry changed in next hop or metric.
    fn receive(&mut self, at: NodeId, from: NodeId, link: LinkId, update: &RoutingUpdate) -> Vec<NodeId> {
        let mut changed = Vec::new();
        for adv in &update.entries {
            if adv.destination == at {
                continue;
            }
            let metric = if adv.metric == INFINITE_METRIC { INFINITE_METRIC } else { adv.metric + 1 };
            let cur = &mut self.tables[at.0][adv.destination.0];
            let better = if adv.sequence != cur.sequence {
                adv.sequence > cur.sequence
            } else if metric == INFINITE_METRIC {
                // an invalidation only matters for the route it invalidates
                cur.is_reachable() && cur.next_hop == Some(from)
            } else {
                metric < cur.metric
                    || (metric == cur.metric && cur.next_hop.is_none_or(|n| from < n))
            };
            if !better {
                continue;
            }
            let before = (cur.next_hop, cur.metric);
            cur.sequence = adv.sequence;
            cur.metric = metric;
            if metric == INFINITE_METRIC {
                cur.next_hop = None;
                cur.via_link = None;
            } else {
                cur.next_hop = Some(from);
                cur.via_link = Some(link);
            }
            if before != (cur.next_hop, cur.metric) {
                changed.push(adv.destination);
            }
        }
        changed
    }

    /// Sends `update` from `node` to every neighbor over an intact link,
    /// charging key for each copy.
    fn broadcast(&self, topo: &mut Topology, node: NodeId, update: &RoutingUpdate, now: f64) -> (RoutingActivity, Vec<(NodeId, LinkId)>) {
        let mut activity = RoutingActivity::default();
        let mut delivered = Vec::new();
        for (neighbor, link) in topo.neighbors(node, |_| true) {
            topo.sync(link, now);
            if let Ok(done) = topo.consume(link, update.size_bits, Consumer::Routing) {
                activity.sent.push(Transmission {
                    link,
                    from: node,
                    to: neighbor,
                    bits: update.size_bits,
                    kind: update.kind,
                });
                if done.broke {
                    activity.broke.push(link);
                }
                delivered.push((neighbor, link));
            }
        }
        (activity, delivered)
    }

    /// One synchronous periodic round: each node bumps its sequence number and
    /// every full dump is delivered to the neighbors.
    pub fn periodic_round(&mut self, topo: &mut Topology, now: f64) -> (RoutingActivity, usize) {
        for (i, table) in self.tables.iter_mut().enumerate() {
            table[i].sequence += 2;
        }
        let dumps: Vec<_> = (0..self.tables.len()).map(|n| self.full_dump(NodeId(n))).collect();
        let mut activity = RoutingActivity::default();
        let mut inbox = Vec::new();
        for dump in &dumps {
            let (sent, delivered) = self.broadcast(topo, dump.origin, dump, now);
            activity.absorb(sent);
            inbox.extend(delivered.into_iter().map(|(to, link)| (to, dump.origin, link)));
        }
        let mut changes = 0;
        for (to, from, link) in inbox {
            changes += self.receive(to, from, link, &dumps[from.0]).len();
        }
        (activity, changes)
    }

    /// Runs periodic rounds until tables are stable and every destination
    /// reachable over intact links has a route.
    pub fn converge(&mut self, topo: &mut Topology, now: f64) -> RoutingActivity {
        let mut activity = RoutingActivity::default();
        for _ in 0..4 * self.tables.len() + 4 {
            let (round, changes) = self.periodic_round(topo, now);
            activity.absorb(round);
            if changes == 0 && self.covers_reachable(topo) {
                break;
            }
        }
        activity
    }

    fn covers_reachable(&self, topo: &Topology) -> bool {
        (0..self.tables.len()).all(|src| {
            let reach = topo.reachable_from(NodeId(src), |l| !topo.link(l).broken);
            reach
                .iter()
                .enumerate()
                .all(|(dst, &r)| !r || dst == src || self.path_links(NodeId(src), NodeId(dst)).is_some())
        })
    }

    /// Reacts to a link going down or coming back.
    ///
    /// A broken link invalidates every route through it; the invalidations
    /// flood as incremental updates until no table changes. A restored link
    /// is picked up by the next periodic round.
    pub fn on_topology_change(&mut self, topo: &mut Topology, link: LinkId, change: LinkChange, now: f64) -> RoutingActivity {
        let mut activity = RoutingActivity::default();
        if change == LinkChange::Restored {
            return activity;
        }
        let (a, b) = topo.link(link).endpoints;
        // node -> destinations to advertise
        let mut pending: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in [a, b] {
            for entry in self.tables[node.0].iter_mut() {
                if entry.via_link == Some(link) && entry.is_reachable() {
                    entry.metric = INFINITE_METRIC;
                    entry.sequence += 1;
                    entry.next_hop = None;
                    entry.via_link = None;
                    pending.entry(node).or_default().push(entry.destination);
                }
            }
        }
        while let Some((node, dests)) = pending.pop_first() {
            let entries: Vec<_> = dests
                .iter()
                .map(|d| {
                    let e = &self.tables[node.0][d.0];
                    AdvertisedRoute { destination: *d, metric: e.metric, sequence: e.sequence }
                })
                .collect();
            let update = RoutingUpdate {
                origin: node,
                kind: UpdateKind::Triggered,
                size_bits: self.config.update_bits(entries.len()),
                entries,
            };
            let (sent, delivered) = self.broadcast(topo, node, &update, now);
            activity.absorb(sent);
            for (to, via) in delivered {
                let changed = self.receive(to, node, via, &update);
                if !changed.is_empty() {
                    let slot = pending.entry(to).or_default();
                    for d in changed {
                        if !slot.contains(&d) {
                            slot.push(d);
                        }
                    }
                }
            }
        }
        activity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{names, spec};
    use crate::network::RecoveryPolicy;

    fn line(n: usize) -> Topology {
        let specs: Vec<_> = (1..n)
            .map(|i| spec(&format!("e{i}"), &format!("v{i}"), &format!("v{}", i + 1), 10.0))
            .collect();
        Topology::build(&names(n), &specs, RecoveryPolicy::Full).unwrap()
    }

    #[test]
    fn converges_on_a_line() {
        let mut topo = line(4);
        let mut dsdv = Dsdv::new(4, RoutingConfig::default());
        dsdv.converge(&mut topo, 0.0);
        assert_eq!(dsdv.path_nodes(NodeId(0), NodeId(3)).unwrap(), vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3)]);
        assert_eq!(dsdv.entry(NodeId(3), NodeId(0)).metric, 3);
    }

    #[test]
    fn periodic_round_charges_each_link_twice() {
        let mut topo = line(3);
        let mut dsdv = Dsdv::new(3, RoutingConfig::default());
        dsdv.converge(&mut topo, 0.0);
        let before: f64 = (0..2).map(|l| topo.ledger(LinkId(l)).routing).sum();
        let (act, changes) = dsdv.periodic_round(&mut topo, 1.0);
        assert_eq!(changes, 0);
        assert_eq!(act.sent.len(), 4);
        let bits = RoutingConfig::default().update_bits(3);
        assert!(act.sent.iter().all(|t| t.bits == bits && t.kind == UpdateKind::Periodic));
        let after: f64 = (0..2).map(|l| topo.ledger(LinkId(l)).routing).sum();
        assert!((after - before - 4.0 * bits).abs() < 1e-9);
    }

    #[test]
    fn broken_link_invalidates_and_floods() {
        let mut topo = line(4);
        let mut dsdv = Dsdv::new(4, RoutingConfig::default());
        dsdv.converge(&mut topo, 0.0);
        let e1 = LinkId(0);
        topo.consume(e1, 38e6 + 1.0, Consumer::Data).unwrap();
        let act = dsdv.on_topology_change(&mut topo, e1, LinkChange::Broken, 0.0);
        assert!(act.sent.iter().all(|t| t.kind == UpdateKind::Triggered && t.link != e1));
        assert!(!act.sent.is_empty());
        for far in 1..4 {
            assert!(dsdv.next_hop(NodeId(far), NodeId(0)).is_none());
            assert!(dsdv.next_hop(NodeId(0), NodeId(far)).is_none());
            assert_eq!(dsdv.entry(NodeId(far), NodeId(0)).sequence % 2, 1);
        }
        assert!(dsdv.next_hop(NodeId(1), NodeId(3)).is_some());
    }

    #[test]
    fn alternate_route_found_after_break() {
        // ring v1-v2-v3-v4-v1
        let specs = vec![
            spec("a", "v1", "v2", 10.0),
            spec("b", "v2", "v3", 10.0),
            spec("c", "v3", "v4", 10.0),
            spec("d", "v4", "v1", 10.0),
        ];
        let mut topo = Topology::build(&names(4), &specs, RecoveryPolicy::Full).unwrap();
        let mut dsdv = Dsdv::new(4, RoutingConfig::default());
        dsdv.converge(&mut topo, 0.0);
        assert_eq!(dsdv.next_hop(NodeId(0), NodeId(1)).unwrap().0, NodeId(1));
        topo.consume(LinkId(0), 38e6 + 1.0, Consumer::Data).unwrap();
        dsdv.on_topology_change(&mut topo, LinkId(0), LinkChange::Broken, 0.0);
        assert!(dsdv.next_hop(NodeId(0), NodeId(1)).is_none());
        dsdv.converge(&mut topo, 1.0);
        assert_eq!(dsdv.path_nodes(NodeId(0), NodeId(1)).unwrap(), vec![NodeId(0), NodeId(3), NodeId(2), NodeId(1)]);
    }
}
