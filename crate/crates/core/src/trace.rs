//! Append-only record of one simulation run and its on-disk form.
//!
//! A trace directory holds `run.json` (run metadata, link events, final key
//! ledgers) and three CSV tables: `trace.csv` (one row per packet),
//! `pools.csv` (pool level samples) and `routing.csv` (one row per routing
//! update crossing a link).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{KeyLedger, LinkId, NodeId};
use crate::routing::UpdateKind;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub name: String,
    pub a: NodeId,
    pub b: NodeId,
    pub length_km: f64,
    pub r_k: f64,
    pub pool_initial: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: String,
    pub seed: u64,
    pub horizon: f64,
    pub sample_interval: f64,
    pub routing_period: f64,
    pub pair_rate: f64,
    pub packet_bits: f64,
    /// Upper bound on the end-to-end latency of any loop-free path.
    pub max_path_latency: f64,
    pub nodes: Vec<String>,
    pub links: Vec<LinkInfo>,
    pub pairs: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    DroppedNoRoute,
    DroppedInsufficientKey,
    InFlight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub bits: f64,
    pub injected: f64,
    pub outcome: Outcome,
    /// Delivery or drop time; `None` while in flight.
    pub finished: Option<f64>,
    /// Nodes visited so far, starting at the source.
    pub path: Vec<NodeId>,
}

impl PacketRecord {
    pub fn owd(&self) -> Option<f64> {
        match (self.outcome, self.finished) {
            (Outcome::Delivered, Some(t)) => Some(t - self.injected),
            _ => None,
        }
    }

    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSample {
    pub time: f64,
    pub link: LinkId,
    pub pool: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub time: f64,
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub bits: f64,
    pub kind: UpdateKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkEventKind {
    Broken,
    Restored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub time: f64,
    pub link: LinkId,
    pub kind: LinkEventKind,
    /// Pool level of every link at the moment of the event.
    pub pools: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunFile {
    meta: RunMeta,
    link_events: Vec<LinkEvent>,
    ledgers: Vec<KeyLedger>,
    final_pools: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub meta: RunMeta,
    pub packets: Vec<PacketRecord>,
    pub pool_samples: Vec<PoolSample>,
    pub routing: Vec<RoutingRecord>,
    pub link_events: Vec<LinkEvent>,
    /// Key ledgers at the horizon.
    pub ledgers: Vec<KeyLedger>,
    /// Pool levels at the horizon.
    pub final_pools: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PacketRow {
    id: u64,
    source: usize,
    destination: usize,
    bits: f64,
    injected: f64,
    outcome: Outcome,
    finished: Option<f64>,
    path: String,
}

pub const PACKETS_FILE: &str = "trace.csv";
pub const POOLS_FILE: &str = "pools.csv";
pub const ROUTING_FILE: &str = "routing.csv";
pub const RUN_FILE: &str = "run.json";

impl TraceLog {
    pub fn first_break(&self) -> Option<&LinkEvent> {
        self.link_events.iter().find(|e| e.kind == LinkEventKind::Broken)
    }

    pub fn routing_bits(&self) -> f64 {
        self.routing.iter().map(|r| r.bits).sum()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), TraceError> {
        fs::create_dir_all(dir).map_err(|source| io_err(dir, source))?;

        let path = dir.join(RUN_FILE);
        let file = File::create(&path).map_err(|source| io_err(&path, source))?;
        let run = RunFile {
            meta: self.meta.clone(),
            link_events: self.link_events.clone(),
            ledgers: self.ledgers.clone(),
            final_pools: self.final_pools.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(file), &run)
            .map_err(|source| TraceError::Json { path: show(&path), source })?;

        let rows = self.packets.iter().map(|p| PacketRow {
            id: p.id,
            source: p.source.0,
            destination: p.destination.0,
            bits: p.bits,
            injected: p.injected,
            outcome: p.outcome,
            finished: p.finished,
            path: p.path.iter().map(|n| n.0.to_string()).collect::<Vec<_>>().join(">"),
        });
        write_csv(&dir.join(PACKETS_FILE), rows)?;
        write_csv(&dir.join(POOLS_FILE), self.pool_samples.iter())?;
        write_csv(&dir.join(ROUTING_FILE), self.routing.iter())?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, TraceError> {
        let path = dir.join(RUN_FILE);
        let file = File::open(&path).map_err(|source| io_err(&path, source))?;
        let run: RunFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|source| TraceError::Json { path: show(&path), source })?;

        let packets_path = dir.join(PACKETS_FILE);
        let packets = read_csv::<PacketRow>(&packets_path)?
            .into_iter()
            .map(|row| {
                let path = if row.path.is_empty() {
                    Vec::new()
                } else {
                    row.path
                        .split('>')
                        .map(|s| s.parse().map(NodeId))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| TraceError::Format { path: show(&packets_path), message: e.to_string() })?
                };
                Ok(PacketRecord {
                    id: row.id,
                    source: NodeId(row.source),
                    destination: NodeId(row.destination),
                    bits: row.bits,
                    injected: row.injected,
                    outcome: row.outcome,
                    finished: row.finished,
                    path,
                })
            })
            .collect::<Result<Vec<_>, TraceError>>()?;

        Ok(Self {
            meta: run.meta,
            packets,
            pool_samples: read_csv(&dir.join(POOLS_FILE))?,
            routing: read_csv(&dir.join(ROUTING_FILE))?,
            link_events: run.link_events,
            ledgers: run.ledgers,
            final_pools: run.final_pools,
        })
    }
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn io_err(path: &Path, source: std::io::Error) -> TraceError {
    TraceError::Io { path: show(path), source }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<(), TraceError> {
    let csv_err = |source| TraceError::Csv { path: show(path), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| io_err(path, source))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TraceError> {
    let csv_err = |source| TraceError::Csv { path: show(path), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}
