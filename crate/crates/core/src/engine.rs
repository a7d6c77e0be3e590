//! Discrete-event core.
//!
//! A single event loop merges the per-pair packet streams, forwards packets
//! hop by hop through trusted relays (each hop spends key on its link), runs
//! the routing timers and link restorations, and samples pool levels. Events
//! are ordered by time, then by kind, then by a kind-specific id, so a run is
//! a pure function of (scenario, seed).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::network::{ConsumeError, Consumer, LinkId, NodeId, Topology};
use crate::routing::{Dsdv, LinkChange, RoutingActivity, RoutingConfig};
use crate::trace::{
    LinkEvent, LinkEventKind, LinkInfo, Outcome, PacketRecord, PoolSample, RoutingRecord, RunMeta, TraceLog,
};
use crate::traffic::{streams, PairStream, TrafficProfile};

/// Classical channel delay model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    /// Propagation delay (s/km).
    pub propagation_per_km: f64,
    /// Classical line rate (bits/s) used for serialization delay.
    pub line_rate: f64,
    /// Serialize packets one at a time per link direction.
    pub queueing: bool,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { propagation_per_km: 5e-6, line_rate: 100e6, queueing: false }
    }
}

impl LatencyModel {
    pub fn hop_latency(&self, length_km: f64, bits: f64) -> f64 {
        self.propagation_per_km * length_km + bits / self.line_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub horizon: f64,
    /// Pool sampling cadence (s); zero disables sampling.
    pub sample_interval: f64,
    pub latency: LatencyModel,
    pub routing: RoutingConfig,
    /// Keep one record per packet.
    pub record_packets: bool,
    /// End the run at the first link break.
    pub stop_at_first_break: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon: 120.0,
            sample_interval: 0.1,
            latency: LatencyModel::default(),
            routing: RoutingConfig::default(),
            record_packets: true,
            stop_at_first_break: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Priority {
    LinkRestore,
    RoutingTimer,
    PacketHop,
    PacketInject,
    MetricSample,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    LinkRestore(LinkId),
    RoutingTimer,
    PacketHop { packet: usize, at: NodeId },
    PacketInject { stream: usize },
    MetricSample,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    priority: Priority,
    tiebreak: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (f64, Priority, u64) {
        (self.time, self.priority, self.tiebreak)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, pa, ia) = self.key();
        let (tb, pb, ib) = other.key();
        tb.total_cmp(&ta).then(pb.cmp(&pa)).then(ib.cmp(&ia))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Simulation {
    topo: Topology,
    routing: Dsdv,
    streams: Vec<PairStream>,
    options: RunOptions,
    queue: BinaryHeap<Event>,
    packets: Vec<PacketRecord>,
    /// Finished packet slots available for reuse when packets are not kept.
    free_slots: Vec<usize>,
    next_packet_id: u64,
    /// Per link and direction, when the line is free again.
    busy_until: Vec<[f64; 2]>,
    trace: TraceLog,
    halted: bool,
}

impl Simulation {
    pub fn new(topo: Topology, profile: &TrafficProfile, options: RunOptions, scenario: &str) -> Self {
        let n = topo.node_count();
        let links: Vec<LinkInfo> = topo
            .links()
            .iter()
            .map(|l| LinkInfo {
                name: l.name.clone(),
                a: l.endpoints.0,
                b: l.endpoints.1,
                length_km: l.length_km,
                r_k: l.r_k,
                pool_initial: l.pool_initial,
                threshold: l.threshold,
            })
            .collect();
        let slowest_hop = links
            .iter()
            .map(|l| options.latency.hop_latency(l.length_km, profile.kappa))
            .fold(0.0, f64::max);
        let meta = RunMeta {
            scenario: scenario.to_string(),
            seed: options.seed,
            horizon: options.horizon,
            sample_interval: options.sample_interval,
            routing_period: options.routing.period,
            pair_rate: profile.pair_rate(),
            packet_bits: profile.kappa,
            max_path_latency: slowest_hop * n.saturating_sub(1) as f64,
            nodes: topo.node_names().to_vec(),
            links,
            pairs: profile.pairs.clone(),
        };
        let link_count = topo.links().len();
        Self {
            routing: Dsdv::new(n, options.routing),
            streams: streams(profile, options.seed),
            queue: BinaryHeap::new(),
            packets: Vec::new(),
            free_slots: Vec::new(),
            next_packet_id: 0,
            busy_until: vec![[0.0; 2]; link_count],
            trace: TraceLog {
                meta,
                packets: Vec::new(),
                pool_samples: Vec::new(),
                routing: Vec::new(),
                link_events: Vec::new(),
                ledgers: Vec::new(),
                final_pools: Vec::new(),
            },
            topo,
            options,
            halted: false,
        }
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        let (priority, tiebreak) = match kind {
            EventKind::LinkRestore(l) => (Priority::LinkRestore, l.0 as u64),
            EventKind::RoutingTimer => (Priority::RoutingTimer, 0),
            EventKind::PacketHop { packet, .. } => (Priority::PacketHop, self.packets[packet].id),
            EventKind::PacketInject { stream } => (Priority::PacketInject, self.streams[stream].stream_id),
            EventKind::MetricSample => (Priority::MetricSample, 0),
        };
        self.queue.push(Event { time, priority, tiebreak, kind });
    }

    /// Runs to the horizon and returns the trace.
    pub fn run(mut self) -> (TraceLog, Topology, Dsdv) {
        let horizon = self.options.horizon;
        let initial = self.routing.converge(&mut self.topo, 0.0);
        self.absorb_routing(initial, 0.0);

        if self.options.routing.period > 0.0 && self.options.routing.period <= horizon {
            self.push(self.options.routing.period, EventKind::RoutingTimer);
        }
        if self.options.sample_interval > 0.0 {
            self.push(0.0, EventKind::MetricSample);
        }
        for i in 0..self.streams.len() {
            let first = self.streams[i].next_event().time;
            if first <= horizon {
                self.push(first, EventKind::PacketInject { stream: i });
            }
        }

        while let Some(event) = self.queue.pop() {
            if event.time > horizon || self.halted {
                self.queue.push(event);
                break;
            }
            self.dispatch(event);
        }

        let end = if self.halted {
            self.trace.first_break().map(|e| e.time).unwrap_or(horizon)
        } else {
            horizon
        };
        self.topo.sync_all(end);
        let link_ids: Vec<LinkId> = (0..self.topo.links().len()).map(LinkId).collect();
        self.trace.ledgers = link_ids.iter().map(|&l| *self.topo.ledger(l)).collect();
        self.trace.final_pools = link_ids.iter().map(|&l| self.topo.link(l).pool).collect();
        if self.options.record_packets {
            self.trace.packets = self.packets;
        }
        (self.trace, self.topo, self.routing)
    }

    fn dispatch(&mut self, event: Event) {
        let now = event.time;
        match event.kind {
            EventKind::PacketInject { stream } => {
                let s = &mut self.streams[stream];
                let (source, destination, bits) = (s.source, s.destination, self.trace.meta.packet_bits);
                let next = s.next_event().time;
                if next <= self.options.horizon {
                    self.push(next, EventKind::PacketInject { stream });
                }
                let id = self.next_packet_id;
                self.next_packet_id += 1;
                let record = PacketRecord {
                    id,
                    source,
                    destination,
                    bits,
                    injected: now,
                    outcome: Outcome::InFlight,
                    finished: None,
                    path: vec![source],
                };
                let slot = match self.free_slots.pop() {
                    Some(slot) => {
                        self.packets[slot] = record;
                        slot
                    }
                    None => {
                        self.packets.push(record);
                        self.packets.len() - 1
                    }
                };
                self.forward(slot, source, now);
            }
            EventKind::PacketHop { packet, at } => {
                self.packets[packet].path.push(at);
                self.forward(packet, at, now);
            }
            EventKind::RoutingTimer => {
                let (activity, _) = self.routing.periodic_round(&mut self.topo, now);
                self.absorb_routing(activity, now);
                let next = now + self.options.routing.period;
                if next <= self.options.horizon {
                    self.push(next, EventKind::RoutingTimer);
                }
            }
            EventKind::LinkRestore(link) => {
                if self.topo.try_restore(link, now) {
                    self.log_link_event(link, LinkEventKind::Restored, now);
                    let activity = self.routing.on_topology_change(&mut self.topo, link, LinkChange::Restored, now);
                    self.absorb_routing(activity, now);
                } else if let Some(t) = self.topo.restore_time(link) {
                    self.push(t.max(now), EventKind::LinkRestore(link));
                }
            }
            EventKind::MetricSample => {
                self.topo.sync_all(now);
                for (i, l) in self.topo.links().iter().enumerate() {
                    self.trace.pool_samples.push(PoolSample { time: now, link: LinkId(i), pool: l.pool });
                }
                let next = now + self.options.sample_interval;
                if next <= self.options.horizon {
                    self.push(next, EventKind::MetricSample);
                }
            }
        }
    }

    /// Moves a packet one hop closer to its destination, or terminates it.
    fn forward(&mut self, packet: usize, at: NodeId, now: f64) {
        let record = &self.packets[packet];
        let (destination, bits) = (record.destination, record.bits);
        if at == destination {
            self.finish(packet, Outcome::Delivered, now);
            return;
        }
        let Some((next, link)) = self.routing.next_hop(at, destination) else {
            self.finish(packet, Outcome::DroppedNoRoute, now);
            return;
        };
        self.topo.sync(link, now);
        match self.topo.consume(link, bits, Consumer::Data) {
            Ok(done) => {
                let state = self.topo.link(link);
                debug_assert!(!state.broken || done.broke, "data crossed a broken link");
                let latency = self.options.latency;
                let arrival = if latency.queueing {
                    let dir = usize::from(state.endpoints.0 != at);
                    let start = self.busy_until[link.0][dir].max(now);
                    let done_tx = start + bits / latency.line_rate;
                    self.busy_until[link.0][dir] = done_tx;
                    done_tx + latency.propagation_per_km * state.length_km
                } else {
                    now + latency.hop_latency(state.length_km, bits)
                };
                self.push(arrival, EventKind::PacketHop { packet, at: next });
                if done.broke {
                    self.handle_break(link, now);
                }
            }
            Err(ConsumeError::LinkDown) => self.finish(packet, Outcome::DroppedNoRoute, now),
            Err(ConsumeError::Insufficient) => self.finish(packet, Outcome::DroppedInsufficientKey, now),
        }
    }

    fn finish(&mut self, packet: usize, outcome: Outcome, now: f64) {
        let r = &mut self.packets[packet];
        r.outcome = outcome;
        r.finished = Some(now);
        if !self.options.record_packets {
            self.free_slots.push(packet);
        }
    }

    fn log_link_event(&mut self, link: LinkId, kind: LinkEventKind, now: f64) {
        self.topo.sync_all(now);
        let pools = self.topo.links().iter().map(|l| l.pool).collect();
        self.trace.link_events.push(LinkEvent { time: now, link, kind, pools });
    }

    fn handle_break(&mut self, link: LinkId, now: f64) {
        let mut pending = vec![link];
        while let Some(link) = pending.pop() {
            self.log_link_event(link, LinkEventKind::Broken, now);
            if self.options.stop_at_first_break {
                self.halted = true;
            }
            if let Some(t) = self.topo.restore_time(link) {
                self.push(t, EventKind::LinkRestore(link));
            }
            let activity = self.routing.on_topology_change(&mut self.topo, link, LinkChange::Broken, now);
            pending.extend(activity.broke.iter().copied());
            self.record_transmissions(&activity, now);
        }
    }

    fn record_transmissions(&mut self, activity: &RoutingActivity, now: f64) {
        self.trace.routing.extend(activity.sent.iter().map(|t| RoutingRecord {
            time: now,
            link: t.link,
            from: t.from,
            to: t.to,
            bits: t.bits,
            kind: t.kind,
        }));
    }

    fn absorb_routing(&mut self, activity: RoutingActivity, now: f64) {
        self.record_transmissions(&activity, now);
        for link in activity.broke {
            self.handle_break(link, now);
        }
    }
}

/// Runs one simulation and returns its trace.
pub fn run(topo: Topology, profile: &TrafficProfile, options: RunOptions, scenario: &str) -> TraceLog {
    Simulation::new(topo, profile, options, scenario).run().0
}
