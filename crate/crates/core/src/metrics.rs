//! Network indicators.
//!
//! Classical indicators (one-way delay, throughput, delivery ratio, routing
//! cost) come from a trace. The ITS indicators come in two flavours: a fluid
//! model over static routes and constant rates, and empirical values read off
//! simulation runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run, RunOptions};
use crate::network::{LinkId, NodeId, Topology};
use crate::routing::{Dsdv, RoutingConfig};
use crate::scenario::{Scenario, ScenarioError};
use crate::trace::{LinkEventKind, Outcome, PacketRecord, TraceLog};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("window must be positive, got {0}")]
    Window(f64),
    #[error("trace contains no packets")]
    EmptyTrace,
    #[error("operation and recovery time are both zero")]
    DegenerateEfficiency,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("no route from {0} to {1} on the converged tables")]
    Unrouted(NodeId, NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub start: f64,
    pub injected: usize,
    pub delivered: usize,
    /// Delivered over injected, for packets injected in this window.
    pub pdr: Option<f64>,
    /// Mean delay of packets delivered in this window.
    pub owd: Option<f64>,
    /// Bits delivered in this window divided by its length.
    pub throughput: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSeries {
    pub source: NodeId,
    pub destination: NodeId,
    pub windows: Vec<WindowStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalIndicators {
    pub window: f64,
    pub pairs: Vec<PairSeries>,
    /// Network-wide routing bits per second, one value per window.
    pub rcost: Vec<f64>,
}

impl ClassicalIndicators {
    pub fn pair(&self, source: NodeId, destination: NodeId) -> Option<&PairSeries> {
        self.pairs.iter().find(|p| p.source == source && p.destination == destination)
    }
}

/// Whether a packet counts in delivery-ratio denominators. Packets still in
/// flight at the end count only if they had time to arrive.
fn counts_for_pdr(p: &PacketRecord, meta_horizon: f64, max_latency: f64) -> bool {
    p.outcome != Outcome::InFlight || p.injected < meta_horizon - max_latency
}

pub fn classical_indicators(trace: &TraceLog, window: f64) -> Result<ClassicalIndicators, MetricsError> {
    if !(window > 0.0) {
        return Err(MetricsError::Window(window));
    }
    if trace.packets.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let horizon = trace.meta.horizon;
    let slots = ((horizon / window).ceil() as usize).max(1);
    let slot = |t: f64| ((t / window) as usize).min(slots - 1);

    #[derive(Clone, Copy, Default)]
    struct Acc {
        injected: usize,
        delivered_of_injected: usize,
        delivered: usize,
        delivered_bits: f64,
        owd_sum: f64,
    }
    let pairs = &trace.meta.pairs;
    let mut acc = vec![vec![Acc::default(); slots]; pairs.len()];
    let pair_index = |s: NodeId, d: NodeId| pairs.iter().position(|&(a, b)| a == s && b == d);

    for p in &trace.packets {
        let Some(pi) = pair_index(p.source, p.destination) else { continue };
        if counts_for_pdr(p, horizon, trace.meta.max_path_latency) {
            let w = &mut acc[pi][slot(p.injected)];
            w.injected += 1;
            if p.outcome == Outcome::Delivered {
                w.delivered_of_injected += 1;
            }
        }
        if let (Some(owd), Some(done)) = (p.owd(), p.finished) {
            let w = &mut acc[pi][slot(done)];
            w.delivered += 1;
            w.delivered_bits += p.bits;
            w.owd_sum += owd;
        }
    }

    let series = pairs
        .iter()
        .zip(acc)
        .map(|(&(source, destination), windows)| PairSeries {
            source,
            destination,
            windows: windows
                .into_iter()
                .enumerate()
                .map(|(i, w)| WindowStat {
                    start: i as f64 * window,
                    injected: w.injected,
                    delivered: w.delivered,
                    pdr: (w.injected > 0).then(|| w.delivered_of_injected as f64 / w.injected as f64),
                    owd: (w.delivered > 0).then(|| w.owd_sum / w.delivered as f64),
                    throughput: (w.injected > 0 || w.delivered > 0).then(|| w.delivered_bits / window),
                })
                .collect(),
        })
        .collect();

    let mut rcost = vec![0.0; slots];
    for r in &trace.routing {
        rcost[slot(r.time)] += r.bits / window;
    }
    Ok(ClassicalIndicators { window, pairs: series, rcost })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub source: String,
    pub destination: String,
    pub injected: usize,
    pub delivered: usize,
    pub pdr: Option<f64>,
    pub owd_mean: Option<f64>,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub name: String,
    pub r_k: f64,
    pub data_bits: f64,
    pub routing_bits: f64,
    pub routing_rate: f64,
    pub generated_bits: f64,
    pub min_pool_sampled: Option<f64>,
    pub final_pool: f64,
    pub breaks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakSummary {
    pub link: String,
    pub time: f64,
}

/// Empirical ITS indicators of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItsSummary {
    /// No link broke within the horizon.
    pub stable: bool,
    pub operation_time: Option<f64>,
    pub recovery_time: Option<f64>,
    pub efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub horizon: f64,
    pub pair_rate: f64,
    pub injected: usize,
    pub delivered: usize,
    pub dropped_no_route: usize,
    pub dropped_insufficient_key: usize,
    pub in_flight: usize,
    pub pdr: Option<f64>,
    pub owd_mean: Option<f64>,
    /// Network-wide routing cost after the initial convergence (bits/s).
    pub rcost_steady: f64,
    pub routing_bits: f64,
    pub first_break: Option<BreakSummary>,
    pub its: ItsSummary,
    pub pairs: Vec<PairSummary>,
    pub links: Vec<LinkSummary>,
}

/// Summary scalars of a run, computed from the trace alone.
pub fn summarize(trace: &TraceLog) -> RunSummary {
    let meta = &trace.meta;
    let count = |o: Outcome| trace.packets.iter().filter(|p| p.outcome == o).count();
    let counted: Vec<_> = trace
        .packets
        .iter()
        .filter(|p| counts_for_pdr(p, meta.horizon, meta.max_path_latency))
        .collect();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let delivered_counted = counted.iter().filter(|p| p.outcome == Outcome::Delivered).count();
    let owds: Vec<f64> = trace.packets.iter().filter_map(PacketRecord::owd).collect();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);

    let pairs = meta
        .pairs
        .iter()
        .map(|&(s, d)| {
            let mine: Vec<_> = counted.iter().filter(|p| p.source == s && p.destination == d).collect();
            let delivered = mine.iter().filter(|p| p.outcome == Outcome::Delivered).count();
            let owd: Vec<f64> = trace
                .packets
                .iter()
                .filter(|p| p.source == s && p.destination == d)
                .filter_map(PacketRecord::owd)
                .collect();
            let bits: f64 = trace
                .packets
                .iter()
                .filter(|p| p.source == s && p.destination == d && p.outcome == Outcome::Delivered)
                .map(|p| p.bits)
                .sum();
            PairSummary {
                source: meta.nodes[s.0].clone(),
                destination: meta.nodes[d.0].clone(),
                injected: mine.len(),
                delivered,
                pdr: ratio(delivered, mine.len()),
                owd_mean: mean(&owd),
                throughput: bits / meta.horizon,
            }
        })
        .collect();

    let links = meta
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let id = LinkId(i);
            let routing_bits: f64 = trace.routing.iter().filter(|r| r.link == id).map(|r| r.bits).sum();
            let steady: f64 = trace.routing.iter().filter(|r| r.link == id && r.time > 0.0).map(|r| r.bits).sum();
            let ledger = trace.ledgers.get(i).copied().unwrap_or_default();
            LinkSummary {
                name: l.name.clone(),
                r_k: l.r_k,
                data_bits: ledger.data,
                routing_bits,
                routing_rate: steady / meta.horizon,
                generated_bits: ledger.generated,
                min_pool_sampled: trace
                    .pool_samples
                    .iter()
                    .filter(|s| s.link == id)
                    .map(|s| s.pool)
                    .reduce(f64::min),
                final_pool: trace.final_pools.get(i).copied().unwrap_or(f64::NAN),
                breaks: trace
                    .link_events
                    .iter()
                    .filter(|e| e.link == id && e.kind == LinkEventKind::Broken)
                    .count(),
            }
        })
        .collect();

    let first = trace.first_break();
    let recovery_time = first.and_then(|e| {
        let deficits: Vec<_> = meta
            .links
            .iter()
            .zip(&e.pools)
            .map(|(l, &pool)| (l.pool_initial - pool, l.r_k))
            .collect();
        its_recovery_time(&deficits)
    });
    let operation_time = first.map(|e| e.time);
    let efficiency = match operation_time {
        None => Some(1.0),
        Some(t_o) => recovery_time.and_then(|t_r| its_efficiency(Some(t_o), t_r).ok()),
    };

    let steady_bits: f64 = trace.routing.iter().filter(|r| r.time > 0.0).map(|r| r.bits).sum();
    RunSummary {
        scenario: meta.scenario.clone(),
        seed: meta.seed,
        horizon: meta.horizon,
        pair_rate: meta.pair_rate,
        injected: trace.packets.len(),
        delivered: count(Outcome::Delivered),
        dropped_no_route: count(Outcome::DroppedNoRoute),
        dropped_insufficient_key: count(Outcome::DroppedInsufficientKey),
        in_flight: count(Outcome::InFlight),
        pdr: ratio(delivered_counted, counted.len()),
        owd_mean: mean(&owds),
        rcost_steady: steady_bits / meta.horizon,
        routing_bits: trace.routing_bits(),
        first_break: first.map(|e| BreakSummary { link: meta.links[e.link.0].name.clone(), time: e.time }),
        its: ItsSummary { stable: first.is_none(), operation_time, recovery_time, efficiency },
        pairs,
        links,
    }
}

/// Steady-state routing key consumption per link (bits/s): each endpoint
/// sends one full dump per period.
pub fn steady_routing_overhead(topo: &Topology, config: &RoutingConfig) -> Vec<f64> {
    let dump = config.update_bits(topo.node_count());
    topo.links().iter().map(|_| 2.0 * dump / config.period).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    /// Demand is per ordered pair: every active pair has share 1.
    #[default]
    PerPair,
    /// Demand is the network total, split evenly over the active pairs.
    NormalizedTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkLoad {
    pub link: LinkId,
    pub name: String,
    pub r_k: f64,
    /// Routing key consumption (bits/s).
    pub routing_overhead: f64,
    /// Sum over pairs of traffic share times route membership.
    pub shares: f64,
    pub spendable: f64,
    pub pool_initial: f64,
}

/// Per-link traffic shares from the routes in `routing`.
pub fn link_loads(
    topo: &Topology,
    routing: &Dsdv,
    pairs: &[(NodeId, NodeId)],
    mode: ShareMode,
    overhead: &[f64],
) -> Result<Vec<LinkLoad>, MetricsError> {
    let share = match mode {
        ShareMode::PerPair => 1.0,
        ShareMode::NormalizedTotal => 1.0 / pairs.len().max(1) as f64,
    };
    let mut shares = vec![0.0; topo.links().len()];
    for &(s, d) in pairs {
        let path = routing.path_links(s, d).ok_or(MetricsError::Unrouted(s, d))?;
        for l in path {
            shares[l.0] += share;
        }
    }
    Ok(topo
        .links()
        .iter()
        .enumerate()
        .map(|(i, l)| LinkLoad {
            link: LinkId(i),
            name: l.name.clone(),
            r_k: l.r_k,
            routing_overhead: overhead[i],
            shares: shares[i],
            spendable: l.pool_initial - l.threshold,
            pool_initial: l.pool_initial,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    /// Largest demand keeping every link's consumption within its key rate.
    pub value: f64,
    /// Link that attains the minimum.
    pub binding: Option<LinkId>,
}

/// `min over loaded links of (r_k - O) / shares`. Links without traffic do
/// not constrain the demand.
pub fn its_capability_analytic(loads: &[LinkLoad]) -> Capability {
    loads
        .iter()
        .filter(|l| l.shares > 0.0)
        .map(|l| ((l.r_k - l.routing_overhead) / l.shares, l.link))
        .fold(Capability { value: f64::INFINITY, binding: None }, |best, (v, link)| {
            if v < best.value {
                Capability { value: v, binding: Some(link) }
            } else {
                best
            }
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OperationTime {
    /// Demand within capability: no pool ever drains.
    Stable,
    Finite { time: f64, link: LinkId },
}

impl OperationTime {
    pub fn time(&self) -> Option<f64> {
        match self {
            OperationTime::Stable => None,
            OperationTime::Finite { time, .. } => Some(*time),
        }
    }
}

/// Fluid operation time at `demand`: the first overloaded link to burn its
/// spendable pool.
pub fn fluid_operation_time(loads: &[LinkLoad], demand: f64) -> OperationTime {
    loads
        .iter()
        .filter_map(|l| {
            let excess = demand * l.shares + l.routing_overhead - l.r_k;
            (excess > 0.0).then(|| (l.spendable / excess, l.link))
        })
        .fold(OperationTime::Stable, |best, (time, link)| match best {
            OperationTime::Finite { time: t, .. } if t <= time => best,
            _ => OperationTime::Finite { time, link },
        })
}

/// Time for every link to refill from `(deficit, r_k)`: the largest
/// per-link refill time. `None` when a depleted link generates no key.
pub fn its_recovery_time(deficits: &[(f64, f64)]) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for &(deficit, r_k) in deficits {
        if deficit <= 0.0 {
            continue;
        }
        if r_k <= 0.0 {
            return None;
        }
        worst = worst.max(deficit / r_k);
    }
    Some(worst)
}

/// Pool deficits at the fluid operation time.
pub fn fluid_deficits(loads: &[LinkLoad], demand: f64, t_o: f64) -> Vec<(f64, f64)> {
    loads
        .iter()
        .map(|l| {
            let excess = demand * l.shares + l.routing_overhead - l.r_k;
            ((excess * t_o).clamp(0.0, l.pool_initial), l.r_k)
        })
        .collect()
}

/// `T_o / (T_o + T_r)`; a stable network (`None`) has efficiency 1.
pub fn its_efficiency(operation_time: Option<f64>, recovery_time: f64) -> Result<f64, MetricsError> {
    match operation_time {
        None => Ok(1.0),
        Some(t_o) if t_o + recovery_time > 0.0 => Ok(t_o / (t_o + recovery_time)),
        Some(_) => Err(MetricsError::DegenerateEfficiency),
    }
}

/// Fluid-model ITS report for a scenario at its configured demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub demand: f64,
    pub capability: f64,
    pub binding_link: Option<String>,
    pub operation_time: Option<f64>,
    pub first_link: Option<String>,
    pub recovery_time: Option<f64>,
    pub efficiency: Option<f64>,
    pub loads: Vec<LinkLoad>,
}

/// Converged routes and link loads of a scenario at t = 0.
pub fn scenario_loads(scenario: &Scenario, mode: ShareMode) -> Result<Vec<LinkLoad>, MetricsError> {
    let mut topo = scenario.topology()?;
    let mut dsdv = Dsdv::new(topo.node_count(), scenario.routing);
    dsdv.converge(&mut topo, 0.0);
    let overhead = steady_routing_overhead(&topo, &scenario.routing);
    link_loads(&topo, &dsdv, &scenario.traffic.pairs, mode, &overhead)
}

pub fn analytic_report(scenario: &Scenario, mode: ShareMode) -> Result<AnalyticReport, MetricsError> {
    let loads = scenario_loads(scenario, mode)?;
    let demand = match mode {
        ShareMode::PerPair => scenario.traffic.pair_rate(),
        ShareMode::NormalizedTotal => scenario.traffic.pair_rate() * scenario.traffic.pairs.len() as f64,
    };
    let cap = its_capability_analytic(&loads);
    let op = fluid_operation_time(&loads, demand);
    let (recovery_time, efficiency, first_link) = match op {
        OperationTime::Stable => (Some(0.0), Some(1.0), None),
        OperationTime::Finite { time, link } => {
            let t_r = its_recovery_time(&fluid_deficits(&loads, demand, time));
            let q = t_r.and_then(|t_r| its_efficiency(Some(time), t_r).ok());
            (t_r, q, Some(loads[link.0].name.clone()))
        }
    };
    Ok(AnalyticReport {
        demand,
        capability: cap.value,
        binding_link: cap.binding.map(|l| loads[l.0].name.clone()),
        operation_time: op.time(),
        first_link,
        recovery_time,
        efficiency,
        loads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectionConfig {
    /// Per-pair demand expected to be stable (bits/s).
    pub low: f64,
    /// Per-pair demand expected to break a link (bits/s).
    pub high: f64,
    pub tolerance: f64,
    /// Stability horizon (s); `None` uses `drain_multiple` drain times.
    pub horizon: Option<f64>,
    pub drain_multiple: f64,
    pub seed: u64,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self { low: 1e3, high: 1e6, tolerance: 500.0, horizon: None, drain_multiple: 40.0, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BisectionOutcome {
    Converged { capability: f64, stable: f64, unstable: f64, horizon: f64, runs: usize },
    Inconclusive { reason: String, horizon: f64 },
}

/// Longest time any link needs to refill its spendable pool at its key rate.
pub fn drain_scale(scenario: &Scenario) -> Result<f64, MetricsError> {
    let topo = scenario.topology()?;
    Ok(topo
        .links()
        .iter()
        .filter(|l| l.r_k > 0.0)
        .map(|l| (l.pool_initial - l.threshold) / l.r_k)
        .fold(0.0, f64::max))
}

/// True when no link breaks within `horizon` at the given per-pair demand.
pub fn is_stable(scenario: &Scenario, demand: f64, horizon: f64, seed: u64) -> Result<bool, MetricsError> {
    let s = scenario.with_pair_rate(demand);
    let options = RunOptions {
        seed,
        horizon,
        sample_interval: 0.0,
        record_packets: false,
        stop_at_first_break: true,
        ..s.options.clone()
    };
    let trace = run(s.topology()?, &s.traffic, options, &s.name);
    Ok(trace.first_break().is_none())
}

/// Bisects the per-pair demand between a stable and an unstable rate.
pub fn its_capability_empirical(scenario: &Scenario, config: &BisectionConfig) -> Result<BisectionOutcome, MetricsError> {
    let horizon = match config.horizon {
        Some(h) => h,
        None => config.drain_multiple * drain_scale(scenario)?,
    };
    let (mut lo, mut hi) = (config.low, config.high);
    if !is_stable(scenario, lo, horizon, config.seed)? {
        return Ok(BisectionOutcome::Inconclusive { reason: format!("lower bracket {lo} bps is not stable"), horizon });
    }
    if is_stable(scenario, hi, horizon, config.seed)? {
        return Ok(BisectionOutcome::Inconclusive { reason: format!("upper bracket {hi} bps is stable"), horizon });
    }
    let mut runs = 2;
    while hi - lo > config.tolerance {
        let mid = 0.5 * (lo + hi);
        runs += 1;
        if is_stable(scenario, mid, horizon, config.seed)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BisectionOutcome::Converged { capability: 0.5 * (lo + hi), stable: lo, unstable: hi, horizon, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(link: usize, r_k: f64, overhead: f64, shares: f64) -> LinkLoad {
        LinkLoad {
            link: LinkId(link),
            name: format!("l{link}"),
            r_k,
            routing_overhead: overhead,
            shares,
            spendable: 38e6,
            pool_initial: 40e6,
        }
    }

    #[test]
    fn capability_of_reference_bottleneck() {
        let c = its_capability_analytic(&[load(0, 233e3, 500.0, 10.0), load(1, 5e6, 500.0, 8.0)]);
        assert!((c.value - 23_250.0).abs() < 1e-9);
        assert_eq!(c.binding, Some(LinkId(0)));
    }

    #[test]
    fn single_link_single_pair_capability_is_key_rate() {
        assert_eq!(its_capability_analytic(&[load(0, 1e5, 0.0, 1.0)]).value, 1e5);
    }

    #[test]
    fn idle_links_do_not_constrain() {
        let c = its_capability_analytic(&[load(0, 10.0, 0.0, 0.0), load(1, 1e5, 0.0, 2.0)]);
        assert_eq!(c.value, 5e4);
        assert!(its_capability_analytic(&[load(0, 10.0, 0.0, 0.0)]).value.is_infinite());
    }

    #[test]
    fn fluid_operation_time_reference() {
        let loads = [load(0, 233e3, 500.0, 10.0)];
        let t = fluid_operation_time(&loads, 100e3).time().unwrap();
        assert!((t - 38e6 / (1e6 + 500.0 - 233e3)).abs() < 1e-9);
        assert!((t - 49.5).abs() < 0.05);
        assert_eq!(fluid_operation_time(&loads, 23e3), OperationTime::Stable);
    }

    #[test]
    fn recovery_time_cases() {
        assert!((its_recovery_time(&[(38e6, 233e3)]).unwrap() - 163.09).abs() < 0.01);
        assert_eq!(its_recovery_time(&[(0.0, 233e3), (-5.0, 1.0)]).unwrap(), 0.0);
        // binding link is the largest deficit / rate ratio
        let t = its_recovery_time(&[(10e6, 1e5), (30e6, 1e6)]).unwrap();
        assert_eq!(t, 100.0);
        assert_eq!(its_recovery_time(&[(1.0, 0.0)]), None);
    }

    #[test]
    fn efficiency_cases() {
        assert!((its_efficiency(Some(47.0), 163.0).unwrap() - 0.2238).abs() < 1e-4);
        assert_eq!(its_efficiency(Some(47.0), 0.0).unwrap(), 1.0);
        assert_eq!(its_efficiency(Some(5.0), 5.0).unwrap(), 0.5);
        assert_eq!(its_efficiency(None, 3.0).unwrap(), 1.0);
        assert!(its_efficiency(Some(0.0), 0.0).is_err());
    }
}
