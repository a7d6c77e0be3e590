//! Scenario files: JSON documents describing topology, devices, traffic,
//! routing and engine settings. Quantities carry explicit units.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{LatencyModel, RunOptions};
use crate::network::{LinkSpec, NetworkError, NodeId, RecoveryPolicy, Topology};
use crate::qkd_rate::QkdDeviceParams;
use crate::routing::RoutingConfig;
use crate::traffic::TrafficProfile;
use crate::units::{BitRate, Bits, Kilometers, PerSecond, Seconds};

/// One problem found in a scenario, located by JSON path.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{} problem(s):\n{}", .0.len(), .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        let message = e.to_string();
        // serde_json appends " at line L column C"; keep just the message
        let message = match message.rfind(" at line ") {
            Some(i) => message[..i].to_string(),
            None => message,
        };
        ScenarioError::Syntax { line: e.line(), column: e.column(), message }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDef {
    pub id: String,
    pub a: String,
    pub b: String,
    pub length: Kilometers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_initial: Option<Bits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Bits>,
    /// Per-link device overrides, merged over the global device block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolDefaults {
    pub initial: Bits,
    pub threshold: Bits,
}

impl Default for PoolDefaults {
    fn default() -> Self {
        Self { initial: Bits(40e6), threshold: Bits(2e6) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSet {
    /// `"all"`: every ordered pair of distinct nodes.
    Keyword(String),
    List(Vec<(String, String)>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficDef {
    /// Offered load per ordered pair; exclusive with `lambda`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_rate: Option<BitRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<PerSecond>,
    pub packet_size: Bits,
    pub pairs: PairSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingDef {
    pub period: Seconds,
    pub entry_bytes: u32,
    pub header_bytes: u32,
}

impl Default for RoutingDef {
    fn default() -> Self {
        let d = RoutingConfig::default();
        Self { period: Seconds(d.period), entry_bytes: d.entry_bytes, header_bytes: d.header_bytes }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineDef {
    pub horizon: Seconds,
    pub seed: u64,
    pub sample_interval: Seconds,
    pub propagation_per_km: Seconds,
    pub line_rate: BitRate,
    pub queueing: bool,
    pub recovery: RecoveryPolicy,
}

impl Default for EngineDef {
    fn default() -> Self {
        let lat = LatencyModel::default();
        Self {
            horizon: Seconds(120.0),
            seed: 1,
            sample_interval: Seconds(0.1),
            propagation_per_km: Seconds(lat.propagation_per_km),
            line_rate: BitRate(lat.line_rate),
            queueing: lat.queueing,
            recovery: RecoveryPolicy::Full,
        }
    }
}

/// The scenario document as written on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub nodes: Vec<String>,
    pub links: Vec<LinkDef>,
    #[serde(default)]
    pub pools: PoolDefaults,
    /// Global device parameters; omitted fields take the reference defaults.
    #[serde(default)]
    pub device: Value,
    pub traffic: TrafficDef,
    #[serde(default)]
    pub routing: RoutingDef,
    #[serde(default)]
    pub engine: EngineDef,
}

/// A validated scenario with defaults applied and device parameters resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub nodes: Vec<String>,
    pub links: Vec<LinkSpec>,
    pub traffic: TrafficProfile,
    pub routing: RoutingConfig,
    pub options: RunOptions,
    pub recovery: RecoveryPolicy,
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn resolve_device(global: &Value, local: Option<&Value>, path: &str, diags: &mut Vec<Diagnostic>) -> Option<QkdDeviceParams> {
    let mut merged = match global {
        Value::Null => Value::Object(Default::default()),
        v => v.clone(),
    };
    if let Some(local) = local {
        merge(&mut merged, local);
    }
    match serde_json::from_value::<QkdDeviceParams>(merged) {
        Ok(p) => {
            let problems = p.violations();
            let ok = problems.is_empty();
            diags.extend(problems.into_iter().map(|message| Diagnostic { path: path.to_string(), message }));
            ok.then_some(p)
        }
        Err(e) => {
            diags.push(Diagnostic { path: path.to_string(), message: e.to_string() });
            None
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Resolves defaults and checks every field, reporting all problems at once.
    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        let mut diags = Vec::new();
        let mut bad = |path: String, message: String| diags.push(Diagnostic { path, message });

        if self.nodes.len() < 2 {
            bad("nodes".into(), "at least two nodes are required".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if self.nodes[..i].contains(n) {
                bad(format!("nodes[{i}]"), format!("duplicate node id `{n}`"));
            }
        }
        let node_index = |name: &str| self.nodes.iter().position(|n| n == name);

        if !(self.pools.initial.0 > self.pools.threshold.0) {
            bad("pools".into(), "initial pool must exceed the threshold".into());
        }
        if !(self.pools.threshold.0 >= 0.0) {
            bad("pools.threshold".into(), "threshold must be non-negative".into());
        }

        let mut device_diags = Vec::new();
        let mut links = Vec::new();
        for (i, l) in self.links.iter().enumerate() {
            let at = |field: &str| format!("links[{i}].{field}");
            for (field, end) in [("a", &l.a), ("b", &l.b)] {
                if node_index(end).is_none() {
                    bad(at(field), format!("unknown node `{end}`"));
                }
            }
            if l.a == l.b {
                bad(at("b"), "a link must join two distinct nodes".into());
            }
            if self.links[..i].iter().any(|o| o.id == l.id) {
                bad(at("id"), format!("duplicate link id `{}`", l.id));
            }
            if !(l.length.0 >= 0.0 && l.length.0.is_finite()) {
                bad(at("length"), "length must be a non-negative distance".into());
            }
            let pool_initial = l.pool_initial.unwrap_or(self.pools.initial).0;
            let threshold = l.threshold.unwrap_or(self.pools.threshold).0;
            if !(pool_initial > threshold && threshold >= 0.0) {
                bad(at("pool_initial"), "initial pool must exceed a non-negative threshold".into());
            }
            let device = resolve_device(&self.device, l.device.as_ref(), &at("device"), &mut device_diags);
            if let Some(device) = device {
                links.push(LinkSpec {
                    name: l.id.clone(),
                    a: l.a.clone(),
                    b: l.b.clone(),
                    length_km: l.length.0,
                    device,
                    pool_initial,
                    threshold,
                });
            }
        }
        if self.links.is_empty() {
            resolve_device(&self.device, None, "device", &mut device_diags);
        }

        let t = &self.traffic;
        let kappa = t.packet_size.0;
        if !(kappa > 0.0 && kappa.is_finite()) {
            bad("traffic.packet_size".into(), "packet size must be positive".into());
        }
        let lambda = match (t.pair_rate, t.lambda) {
            (Some(r), None) => {
                if !(r.0 > 0.0) {
                    bad("traffic.pair_rate".into(), "pair rate must be positive".into());
                }
                r.0 / kappa
            }
            (None, Some(l)) => {
                if !(l.0 > 0.0) {
                    bad("traffic.lambda".into(), "lambda must be positive".into());
                }
                l.0
            }
            _ => {
                bad("traffic".into(), "give exactly one of `pair_rate` or `lambda`".into());
                f64::NAN
            }
        };
        let pairs = match &t.pairs {
            PairSet::Keyword(k) if k == "all" => TrafficProfile::all_pairs(self.nodes.len()),
            PairSet::Keyword(k) => {
                bad("traffic.pairs".into(), format!("expected \"all\" or a list of pairs, got \"{k}\""));
                Vec::new()
            }
            PairSet::List(list) => list
                .iter()
                .enumerate()
                .filter_map(|(i, (s, d))| {
                    match (node_index(s), node_index(d)) {
                        (Some(a), Some(b)) if a != b => Some((NodeId(a), NodeId(b))),
                        (Some(_), Some(_)) => {
                            bad(format!("traffic.pairs[{i}]"), "self-pairs are not allowed".into());
                            None
                        }
                        _ => {
                            bad(format!("traffic.pairs[{i}]"), format!("unknown node in pair ({s}, {d})"));
                            None
                        }
                    }
                })
                .collect(),
        };

        let r = &self.routing;
        if !(r.period.0 > 0.0) {
            bad("routing.period".into(), "routing period must be positive".into());
        }
        let e = &self.engine;
        if !(e.horizon.0 > 0.0) {
            bad("engine.horizon".into(), "horizon must be positive".into());
        }
        if !(e.sample_interval.0 >= 0.0) {
            bad("engine.sample_interval".into(), "sample interval must be non-negative".into());
        }
        if !(e.line_rate.0 > 0.0) {
            bad("engine.line_rate".into(), "line rate must be positive".into());
        }
        if !(e.propagation_per_km.0 >= 0.0) {
            bad("engine.propagation_per_km".into(), "propagation delay must be non-negative".into());
        }

        diags.extend(device_diags);
        if !diags.is_empty() {
            return Err(ScenarioError::Invalid(diags));
        }
        let traffic = TrafficProfile::new(lambda, kappa, pairs)
            .map_err(|err| ScenarioError::Invalid(vec![Diagnostic { path: "traffic".into(), message: err.to_string() }]))?;
        let routing = RoutingConfig { period: r.period.0, entry_bytes: r.entry_bytes, header_bytes: r.header_bytes };
        Ok(Scenario {
            name: self.name.clone(),
            nodes: self.nodes.clone(),
            links,
            traffic,
            routing,
            options: RunOptions {
                seed: e.seed,
                horizon: e.horizon.0,
                sample_interval: e.sample_interval.0,
                latency: LatencyModel {
                    propagation_per_km: e.propagation_per_km.0,
                    line_rate: e.line_rate.0,
                    queueing: e.queueing,
                },
                routing,
                record_packets: true,
                stop_at_first_break: false,
            },
            recovery: e.recovery,
        })
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        ScenarioFile::parse(text)?.resolve()
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// Builds the topology, computing every link's key rate.
    pub fn topology(&self) -> Result<Topology, ScenarioError> {
        Topology::build(&self.nodes, &self.links, self.recovery).map_err(|e: NetworkError| {
            ScenarioError::Invalid(vec![Diagnostic { path: "links".into(), message: e.to_string() }])
        })
    }

    /// Same scenario with a different per-pair offered load (bits/s).
    pub fn with_pair_rate(&self, rate: f64) -> Self {
        let mut s = self.clone();
        s.traffic.lambda = rate / s.traffic.kappa;
        s
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.options.seed = seed;
        s
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        let mut s = self.clone();
        s.options.horizon = horizon;
        s
    }
}

/// The reference six-node, eight-link scenario shipped with the crate.
pub const SECOQC_JSON: &str = include_str!("../../../scenarios/secoqc.json");

pub fn secoqc() -> Scenario {
    Scenario::from_json(SECOQC_JSON).expect("bundled scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "name": "toy",
        "nodes": ["a", "b"],
        "links": [{"id": "l", "a": "a", "b": "b", "length": "85km"}],
        "traffic": {"pair_rate": "10kbps", "packet_size": "500B", "pairs": "all"}
    }"#;

    #[test]
    fn toy_scenario_resolves_with_defaults() {
        let s = Scenario::from_json(TOY).unwrap();
        assert_eq!(s.traffic.kappa, 4000.0);
        assert_eq!(s.traffic.lambda, 2.5);
        assert_eq!(s.links[0].pool_initial, 40e6);
        assert_eq!(s.links[0].threshold, 2e6);
        assert_eq!(s.links[0].device, QkdDeviceParams::default());
        assert_eq!(s.traffic.pairs.len(), 2);
        s.topology().unwrap();
    }

    #[test]
    fn negative_lambda_rejected() {
        let text = TOY.replace(r#""pair_rate": "10kbps""#, r#""lambda": -3"#);
        let Err(ScenarioError::Invalid(d)) = Scenario::from_json(&text) else { panic!() };
        assert!(d.iter().any(|d| d.path == "traffic.lambda"));
    }

    #[test]
    fn decoy_constraint_reported_with_path() {
        let text = TOY.replace(r#""length": "85km""#, r#""length": "85km", "device": {"nu": 0.5}"#);
        let Err(ScenarioError::Invalid(d)) = Scenario::from_json(&text) else { panic!() };
        assert!(d.iter().any(|d| d.path == "links[0].device" && d.message.contains("nu < mu")), "{d:?}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = Scenario::from_json("{\n  \"name\": 3,\n}").unwrap_err();
        assert!(matches!(err, ScenarioError::Syntax { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_node_reported() {
        let text = TOY.replace(r#""b": "b""#, r#""b": "zz""#);
        let Err(ScenarioError::Invalid(d)) = Scenario::from_json(&text) else { panic!() };
        assert!(d.iter().any(|d| d.path == "links[0].b"));
    }

    #[test]
    fn global_device_override_applies() {
        let text = TOY.replace(r#""nodes""#, r#""device": {"alpha": 0.25}, "nodes""#);
        let s = Scenario::from_json(&text).unwrap();
        assert_eq!(s.links[0].device.alpha, 0.25);
        assert_eq!(s.links[0].device.mu, 0.4);
    }
}
