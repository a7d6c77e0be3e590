use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use qscn::metrics::ClassicalIndicators;
use serde::Serialize;

pub const SUMMARY_FILE: &str = "summary.json";
pub const INDICATORS_FILE: &str = "indicators.csv";
pub const ANALYTIC_FILE: &str = "analytic.json";

pub fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, json_text(value)?).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct IndicatorRow<'a> {
    window_start: f64,
    source: &'a str,
    destination: &'a str,
    injected: usize,
    delivered: usize,
    pdr: Option<f64>,
    owd: Option<f64>,
    throughput: Option<f64>,
    /// Network-wide routing cost in the same window.
    rcost: f64,
}

/// One row per pair and window; empty cells mark undefined values.
pub fn write_indicators(path: &Path, ind: &ClassicalIndicators, nodes: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for pair in &ind.pairs {
        for (win, rcost) in pair.windows.iter().zip(&ind.rcost) {
            w.serialize(IndicatorRow {
                window_start: win.start,
                source: &nodes[pair.source.0],
                destination: &nodes[pair.destination.0],
                injected: win.injected,
                delivered: win.delivered,
                pdr: win.pdr,
                owd: win.owd,
                throughput: win.throughput,
                rcost: *rcost,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
