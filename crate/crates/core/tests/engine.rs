mod common;

use proptest::prelude::*;
use qscn::engine::Simulation;
use qscn::network::{LinkId, RecoveryPolicy};
use qscn::scenario::{secoqc, Scenario};
use qscn::trace::{LinkEventKind, Outcome, TraceLog};

fn overloaded(seed: u64) -> Scenario {
    secoqc().with_pair_rate(100e3).with_horizon(90.0).with_seed(seed)
}

fn simulate(s: &Scenario) -> (TraceLog, qscn::network::Topology) {
    let (trace, topo, _) = Simulation::new(s.topology().unwrap(), &s.traffic, s.options.clone(), &s.name).run();
    (trace, topo)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn key_ledger_balances_on_every_link(seed in any::<u64>()) {
        let (trace, topo) = simulate(&overloaded(seed));
        for (i, l) in topo.links().iter().enumerate() {
            let residual = topo.ledger_residual(LinkId(i));
            let scale = l.pool_initial + topo.ledger(LinkId(i)).generated;
            prop_assert!(residual.abs() <= 1e-9 * scale, "{}: residual {}", l.name, residual);
            prop_assert!(l.pool >= 0.0);
            prop_assert_eq!(trace.final_pools[i], l.pool);
        }
        prop_assert!(trace.pool_samples.iter().all(|s| s.pool >= 0.0));
        prop_assert!(trace.link_events.iter().all(|e| e.pools.iter().all(|&p| p >= 0.0)));
    }

    #[test]
    fn data_key_matches_hops_taken(seed in any::<u64>()) {
        let (trace, topo) = simulate(&overloaded(seed));
        let mut by_path = vec![0.0; topo.links().len()];
        for p in &trace.packets {
            for w in p.path.windows(2) {
                by_path[topo.link_between(w[0], w[1]).expect("hop over a link").0] += p.bits;
            }
        }
        let in_flight = trace.packets.iter().filter(|p| p.outcome == Outcome::InFlight).count() as f64;
        for (i, expected) in by_path.iter().enumerate() {
            let spent = topo.ledger(LinkId(i)).data;
            // packets in flight at the horizon have paid for a hop not yet in their path
            prop_assert!(spent >= *expected && spent - expected <= in_flight * trace.meta.packet_bits);
        }
    }

    #[test]
    fn packets_follow_loop_free_paths(seed in any::<u64>()) {
        let (trace, topo) = simulate(&overloaded(seed));
        for p in &trace.packets {
            prop_assert_eq!(p.path[0], p.source);
            let mut seen = p.path.clone();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), p.path.len(), "packet {} revisits a node", p.id);
            match p.outcome {
                Outcome::Delivered => {
                    prop_assert_eq!(*p.path.last().unwrap(), p.destination);
                    prop_assert!(p.owd().unwrap() > 0.0);
                }
                Outcome::InFlight => prop_assert!(p.finished.is_none()),
                _ => prop_assert!(p.finished.is_some() && p.owd().is_none()),
            }
            prop_assert!(p.hops() < topo.node_count());
        }
    }
}

#[test]
fn broken_link_restores_after_refill_time() {
    let s = secoqc().with_pair_rate(100e3).with_horizon(400.0);
    let (trace, _) = simulate(&s);
    let first = trace.first_break().expect("e1 breaks at 100 Kbps");
    let restored = trace
        .link_events
        .iter()
        .find(|e| e.link == first.link && e.kind == LinkEventKind::Restored && e.time > first.time)
        .expect("restored within the horizon");
    let info = &trace.meta.links[first.link.0];
    let expected = (info.pool_initial - first.pools[first.link.0]) / info.r_k;
    assert!(((restored.time - first.time) - expected).abs() < 1e-6, "{} vs {expected}", restored.time - first.time);
    assert!((restored.pools[first.link.0] - info.pool_initial).abs() < 1e-3);
}

#[test]
fn threshold_policy_restores_sooner() {
    let mut s = secoqc().with_pair_rate(100e3).with_horizon(200.0);
    s.recovery = RecoveryPolicy::Threshold;
    let (trace, _) = simulate(&s);
    let first = trace.first_break().unwrap();
    let restored = trace.link_events.iter().find(|e| e.kind == LinkEventKind::Restored).unwrap();
    let info = &trace.meta.links[first.link.0];
    let expected = (info.threshold - first.pools[first.link.0]) / info.r_k;
    assert!(((restored.time - first.time) - expected).abs() < 1e-6);
    assert!(restored.time - first.time < 1.0);
}

#[test]
fn same_seed_same_trace() {
    let s = overloaded(3);
    assert_eq!(simulate(&s).0, simulate(&s).0);
    assert_ne!(simulate(&s).0.packets, simulate(&s.with_seed(4)).0.packets);
}

#[test]
fn stop_at_first_break_halts() {
    let mut s = overloaded(5);
    s.options.stop_at_first_break = true;
    let (trace, _) = simulate(&s);
    let first = trace.first_break().unwrap().time;
    assert_eq!(trace.link_events.len(), 1);
    assert!(trace.packets.iter().all(|p| p.injected <= first));
}

#[test]
fn queueing_never_shortens_delay() {
    let plain = secoqc().with_horizon(20.0);
    let mut queued = plain.clone();
    queued.options.latency.queueing = true;
    let (a, _) = simulate(&plain);
    let (b, _) = simulate(&queued);
    assert_eq!(a.packets.len(), b.packets.len());
    for (x, y) in a.packets.iter().zip(&b.packets) {
        if let (Some(dx), Some(dy)) = (x.owd(), y.owd()) {
            assert!(dy >= dx - 1e-12);
        }
    }
}
