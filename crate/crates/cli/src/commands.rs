use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use qscn::engine;
use qscn::metrics::{
    analytic_report, classical_indicators, its_capability_empirical, summarize, BisectionConfig, BisectionOutcome,
    MetricsError, RunSummary, ShareMode,
};
use qscn::qkd_rate::{secure_rate, QkdDeviceParams};
use qscn::scenario::Scenario;
use qscn::trace::TraceLog;
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{self, ANALYTIC_FILE, INDICATORS_FILE, SUMMARY_FILE};
use crate::{AnalyzeArgs, CapabilityArgs, Failure, Outcome, Overrides, RateTableArgs, RunArgs, Shares, SweepArgs};

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn internal(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Internal(e.into())
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn apply(mut s: Scenario, o: &Overrides) -> Result<Scenario, Failure> {
    if let Some(d) = o.demand {
        if !(d.0 > 0.0 && d.0.is_finite()) {
            return Err(invalid(anyhow!("--demand must be positive")));
        }
        s = s.with_pair_rate(d.0);
    }
    if let Some(seed) = o.seed {
        s = s.with_seed(seed);
    }
    if let Some(h) = o.horizon {
        if !(h.0 > 0.0 && h.0.is_finite()) {
            return Err(invalid(anyhow!("--horizon must be positive")));
        }
        s = s.with_horizon(h.0);
    }
    Ok(s)
}

fn positive_window(w: f64) -> Result<f64, Failure> {
    if w > 0.0 && w.is_finite() {
        Ok(w)
    } else {
        Err(invalid(anyhow!("--window must be positive")))
    }
}

/// Writes the per-link key rates, the one number every other result hangs on.
fn preflight(s: &Scenario, out: &mut dyn Write) -> Result<(), Failure> {
    let topo = s.topology().map_err(invalid)?;
    let nodes = topo.node_names();
    let mut text = format!("scenario {}: {} nodes, {} links\n", s.name, topo.node_count(), topo.links().len());
    for l in topo.links() {
        text += &format!(
            "  {:<8} {:>6} - {:<6} {:>7.1} km  r_k = {:>12.1} bps\n",
            l.name,
            nodes[l.endpoints.0 .0],
            nodes[l.endpoints.1 .0],
            l.length_km,
            l.r_k
        );
    }
    out.write_all(text.as_bytes()).map_err(internal)
}

pub fn validate(path: &Path) -> Outcome {
    let s = load(path)?;
    preflight(&s, &mut io::stdout())
}

fn check(expect: &crate::Expectations, summary: &RunSummary) -> Outcome {
    let violations = expect.check(summary);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Expectation(violations))
    }
}

/// Summary and indicators of a trace, written next to it.
fn write_products(trace: &TraceLog, window: f64, dir: &Path) -> Result<RunSummary, Failure> {
    let summary = summarize(trace);
    output::write_json(&dir.join(SUMMARY_FILE), &summary).map_err(internal)?;
    match classical_indicators(trace, window) {
        Ok(ind) => output::write_indicators(&dir.join(INDICATORS_FILE), &ind, &trace.meta.nodes).map_err(internal)?,
        Err(MetricsError::EmptyTrace) => eprintln!("note: no packets were injected, {INDICATORS_FILE} not written"),
        Err(e) => return Err(invalid(e)),
    }
    Ok(summary)
}

fn print_brief(s: &RunSummary) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("packets: {} injected, {} delivered, PDR {}", s.injected, s.delivered, opt(s.pdr));
    println!("mean OWD: {} s, steady RCost: {:.1} bps", opt(s.owd_mean), s.rcost_steady);
    match &s.first_break {
        Some(b) => println!(
            "first break: {} at {:.3} s; T_r {} s; Q {}",
            b.link,
            b.time,
            opt(s.its.recovery_time),
            opt(s.its.efficiency)
        ),
        None => println!("no link broke (Q = 1)"),
    }
}

pub fn run(args: RunArgs) -> Outcome {
    let s = apply(load(&args.scenario)?, &args.overrides)?;
    let window = positive_window(args.window.0)?;
    preflight(&s, &mut io::stderr())?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display())).map_err(internal)?;

    let trace = engine::run(s.topology().map_err(invalid)?, &s.traffic, s.options.clone(), &s.name);
    trace.write_dir(&args.out).map_err(internal)?;
    let summary = write_products(&trace, window, &args.out)?;
    match analytic_report(&s, ShareMode::PerPair) {
        Ok(report) => output::write_json(&args.out.join(ANALYTIC_FILE), &report).map_err(internal)?,
        Err(e) => eprintln!("note: no fluid-model report: {e}"),
    }
    print_brief(&summary);
    println!("results in {}", args.out.display());
    check(&args.expect, &summary)
}

pub fn analyze(args: AnalyzeArgs) -> Outcome {
    let window = positive_window(args.window.0)?;
    let trace = TraceLog::read_dir(&args.trace).map_err(invalid)?;
    let summary = match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(internal)?;
            write_products(&trace, window, dir)?
        }
        None => {
            let summary = summarize(&trace);
            print!("{}", output::json_text(&summary).map_err(internal)?);
            summary
        }
    };
    check(&args.expect, &summary)
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || invalid(anyhow!("--seeds: expected `a..b` or a comma list, got `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

#[derive(Serialize)]
struct SweepRow {
    demand: f64,
    seed: u64,
    injected: usize,
    delivered: usize,
    pdr: Option<f64>,
    owd_mean: Option<f64>,
    rcost: f64,
    first_break_link: Option<String>,
    operation_time: Option<f64>,
    recovery_time: Option<f64>,
    efficiency: Option<f64>,
}

#[derive(Serialize)]
struct Spread {
    count: usize,
    min: Option<f64>,
    mean: Option<f64>,
    max: Option<f64>,
}

impl Spread {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let xs: Vec<f64> = values.flatten().collect();
        let n = xs.len();
        Spread {
            count: n,
            min: xs.iter().copied().reduce(f64::min),
            mean: (n > 0).then(|| xs.iter().sum::<f64>() / n as f64),
            max: xs.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Serialize)]
struct DemandSummary {
    demand: f64,
    replications: usize,
    broke: usize,
    pdr: Spread,
    owd_mean: Spread,
    rcost: Spread,
    operation_time: Spread,
    recovery_time: Spread,
    efficiency: Spread,
}

pub fn sweep(args: SweepArgs) -> Outcome {
    let mut base = load(&args.scenario)?;
    if let Some(h) = args.horizon {
        base = apply(base, &Overrides { demand: None, seed: None, horizon: Some(h) })?;
    }
    let seeds = parse_seeds(&args.seeds)?;
    let demands: Vec<f64> = if args.demands.is_empty() {
        vec![base.traffic.pair_rate()]
    } else {
        args.demands.iter().map(|d| d.0).collect()
    };
    if demands.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(invalid(anyhow!("--demands must be positive")));
    }
    base.topology().map_err(invalid)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display())).map_err(internal)?;

    let cases: Vec<(f64, u64)> = demands.iter().flat_map(|&d| seeds.iter().map(move |&s| (d, s))).collect();
    let results: Vec<Result<RunSummary, Failure>> = cases
        .par_iter()
        .map(|&(demand, seed)| {
            let s = base.with_pair_rate(demand).with_seed(seed);
            let trace = engine::run(s.topology().map_err(invalid)?, &s.traffic, s.options.clone(), &s.name);
            if args.keep_traces {
                let dir = args.out.join("runs").join(format!("{demand}bps-seed{seed}"));
                trace.write_dir(&dir).map_err(internal)?;
            }
            Ok(summarize(&trace))
        })
        .collect();
    let summaries = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let rows = cases.iter().zip(&summaries).map(|(&(demand, seed), s)| SweepRow {
        demand,
        seed,
        injected: s.injected,
        delivered: s.delivered,
        pdr: s.pdr,
        owd_mean: s.owd_mean,
        rcost: s.rcost_steady,
        first_break_link: s.first_break.as_ref().map(|b| b.link.clone()),
        operation_time: s.its.operation_time,
        recovery_time: s.its.recovery_time,
        efficiency: s.its.efficiency,
    });
    output::write_rows(&args.out.join("sweep.csv"), rows).map_err(internal)?;

    let per_demand: Vec<DemandSummary> = demands
        .iter()
        .map(|&d| {
            let group: Vec<&RunSummary> =
                cases.iter().zip(&summaries).filter(|((dd, _), _)| *dd == d).map(|(_, s)| s).collect();
            DemandSummary {
                demand: d,
                replications: group.len(),
                broke: group.iter().filter(|s| s.first_break.is_some()).count(),
                pdr: Spread::of(group.iter().map(|s| s.pdr)),
                owd_mean: Spread::of(group.iter().map(|s| s.owd_mean)),
                rcost: Spread::of(group.iter().map(|s| Some(s.rcost_steady))),
                operation_time: Spread::of(group.iter().map(|s| s.its.operation_time)),
                recovery_time: Spread::of(group.iter().map(|s| s.its.recovery_time)),
                efficiency: Spread::of(group.iter().map(|s| s.its.efficiency)),
            }
        })
        .collect();
    output::write_json(&args.out.join("sweep_summary.json"), &per_demand).map_err(internal)?;
    for d in &per_demand {
        println!(
            "{:>12.0} bps: {} runs, {} broke, mean PDR {}",
            d.demand,
            d.replications,
            d.broke,
            d.pdr.mean.map_or("-".into(), |x| format!("{x:.4}"))
        );
    }
    println!("results in {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CapabilityReport {
    scenario: String,
    share_mode: ShareMode,
    analytic: f64,
    binding_link: Option<String>,
    /// Analytic value per pair, the unit the bisection works in.
    analytic_per_pair: f64,
    empirical: Option<BisectionOutcome>,
    relative_gap: Option<f64>,
}

pub fn capability(args: CapabilityArgs) -> Outcome {
    let s = load(&args.scenario)?;
    let mode = match args.shares {
        Shares::PerPair => ShareMode::PerPair,
        Shares::NormalizedTotal => ShareMode::NormalizedTotal,
    };
    let report = analytic_report(&s, mode).map_err(invalid)?;
    let per_pair = analytic_report(&s, ShareMode::PerPair).map_err(invalid)?.capability;
    if !(args.tol.0 > 0.0) || !(args.drain_multiple > 0.0) {
        return Err(invalid(anyhow!("--tol and --drain-multiple must be positive")));
    }

    let empirical = if args.analytic_only {
        None
    } else {
        if !per_pair.is_finite() {
            return Err(invalid(anyhow!("no link carries traffic; capability is unbounded")));
        }
        let cfg = BisectionConfig {
            low: args.low.map_or(0.5 * per_pair, |x| x.0),
            high: args.high.map_or(1.5 * per_pair, |x| x.0),
            tolerance: args.tol.0,
            horizon: args.horizon.map(|h| h.0),
            drain_multiple: args.drain_multiple,
            seed: args.seed.unwrap_or(s.options.seed),
        };
        Some(its_capability_empirical(&s, &cfg).map_err(invalid)?)
    };
    let relative_gap = match &empirical {
        Some(BisectionOutcome::Converged { capability, .. }) => Some((capability - per_pair) / per_pair),
        _ => None,
    };
    let out = CapabilityReport {
        scenario: s.name.clone(),
        share_mode: mode,
        analytic: report.capability,
        binding_link: report.binding_link,
        analytic_per_pair: per_pair,
        empirical,
        relative_gap,
    };
    let text = output::json_text(&out).map_err(internal)?;
    match &args.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(internal)?,
        None => print!("{text}"),
    }

    if let Some(limit) = args.expect_within {
        if args.analytic_only {
            return Err(invalid(anyhow!("--expect-within needs the empirical bisection")));
        }
        match relative_gap {
            Some(gap) if gap.abs() <= limit => {}
            Some(gap) => return Err(Failure::Expectation(vec![format!("relative gap {gap:.4} exceeds {limit}")])),
            None => return Err(Failure::Expectation(vec!["bisection was inconclusive".into()])),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RateRow {
    length_km: f64,
    r_k: f64,
    r_per_pulse: f64,
    y1_lower: f64,
    q1_lower: f64,
    e1_upper: f64,
}

pub fn rate_table(args: RateTableArgs) -> Outcome {
    let (from, to, step) = (args.from.0, args.to.0, args.step.0);
    if !(from >= 0.0 && to >= from && step > 0.0) || !(from.is_finite() && to.is_finite()) {
        return Err(invalid(anyhow!("need 0 <= --from <= --to and --step > 0")));
    }
    let device = match &args.scenario {
        None => QkdDeviceParams::default(),
        Some(path) => {
            let s = load(path)?;
            let spec = match &args.link {
                Some(name) => s.links.iter().find(|l| &l.name == name).ok_or_else(|| invalid(anyhow!("no link `{name}`")))?,
                None => s.links.first().ok_or_else(|| invalid(anyhow!("scenario has no links")))?,
            };
            spec.device.clone()
        }
    };
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    let rows = (0..count)
        .map(|i| {
            let l = from + i as f64 * step;
            let r = secure_rate(l, &device).map_err(invalid)?;
            Ok(RateRow {
                length_km: l,
                r_k: r.r_k,
                r_per_pulse: r.r_per_pulse,
                y1_lower: r.y1_lower,
                q1_lower: r.q1_lower,
                e1_upper: r.e1_upper,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    match &args.out {
        Some(path) => output::write_rows(path, rows).map_err(internal),
        None => {
            let mut w = csv::Writer::from_writer(io::stdout());
            for row in rows {
                w.serialize(row).map_err(internal)?;
            }
            w.flush().map_err(internal)
        }
    }
}
