#![allow(dead_code)]

use qscn::engine::RunOptions;
use qscn::network::{LinkSpec, NodeId, RecoveryPolicy};
use qscn::qkd_rate::QkdDeviceParams;
use qscn::routing::RoutingConfig;
use qscn::scenario::Scenario;
use qscn::traffic::TrafficProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("v{i}")).collect()
}

pub fn link(name: &str, a: usize, b: usize, km: f64) -> LinkSpec {
    LinkSpec {
        name: name.into(),
        a: format!("v{}", a + 1),
        b: format!("v{}", b + 1),
        length_km: km,
        device: QkdDeviceParams::default(),
        pool_initial: 40e6,
        threshold: 2e6,
    }
}

/// Random connected simple graph: a random spanning tree plus extra edges.
/// Edges are node index pairs with `a < b`.
pub fn random_edges(rng: &mut impl Rng, n: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        edges.push((u, v));
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let e = (a.min(b), a.max(b));
        if a != b && !edges.contains(&e) {
            edges.push(e);
        }
    }
    edges
}

/// Every simple path from `src` to `dst`, as node sequences.
pub fn all_simple_paths(n: usize, edges: &[(usize, usize)], src: usize, dst: usize) -> Vec<Vec<usize>> {
    fn walk(adj: &[Vec<usize>], at: usize, dst: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if at == dst {
            out.push(path.clone());
            return;
        }
        for &next in &adj[at] {
            if !path.contains(&next) {
                path.push(next);
                walk(adj, next, dst, path, out);
                path.pop();
            }
        }
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut out = Vec::new();
    walk(&adj, src, dst, &mut vec![src], &mut out);
    out
}

/// Oracle route: the lexicographically smallest among the minimum-hop simple
/// paths, found by exhaustive enumeration.
pub fn oracle_path(n: usize, edges: &[(usize, usize)], src: usize, dst: usize) -> Option<Vec<usize>> {
    let paths = all_simple_paths(n, edges, src, dst);
    let shortest = paths.iter().map(Vec::len).min()?;
    paths.into_iter().filter(|p| p.len() == shortest).min()
}

/// Oracle link loads: number of ordered pairs whose oracle path uses each edge.
pub fn oracle_shares(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut shares = vec![0.0; edges.len()];
    for s in 0..n {
        for d in 0..n {
            if s == d {
                continue;
            }
            let path = oracle_path(n, edges, s, d).expect("connected");
            for w in path.windows(2) {
                let e = (w[0].min(w[1]), w[0].max(w[1]));
                let idx = edges.iter().position(|&x| x == e).unwrap();
                shares[idx] += 1.0;
            }
        }
    }
    shares
}

/// Scenario over an explicit edge list with all ordered pairs active.
pub fn scenario_from_edges(name: &str, n: usize, edges: &[(usize, usize)], lengths: &[f64], pair_rate: f64) -> Scenario {
    let routing = RoutingConfig::default();
    let kappa = 4000.0;
    let pairs: Vec<(NodeId, NodeId)> = TrafficProfile::all_pairs(n);
    Scenario {
        name: name.into(),
        nodes: names(n),
        links: edges
            .iter()
            .zip(lengths)
            .enumerate()
            .map(|(i, (&(a, b), &km))| link(&format!("e{}", i + 1), a, b, km))
            .collect(),
        traffic: TrafficProfile::from_bit_rate(pair_rate, kappa, pairs).unwrap(),
        routing,
        options: RunOptions { routing, sample_interval: 1.0, ..RunOptions::default() },
        recovery: RecoveryPolicy::Full,
    }
}

/// Random connected scenario with 3..=6 nodes and fiber lengths in [50, 90] km.
pub fn random_scenario(seed: u64) -> (Scenario, Vec<(usize, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=6);
    let extra = rng.gen_range(0..=n);
    let edges = random_edges(&mut rng, n, extra);
    let lengths: Vec<f64> = edges.iter().map(|_| rng.gen_range(50.0..90.0_f64).round()).collect();
    (scenario_from_edges(&format!("random-{seed}"), n, &edges, &lengths, 10e3), edges)
}
