//! Command-line front end: validate scenarios, run simulations, sweep seeds
//! and demands, bisect the ITS capability, tabulate key rates and re-derive
//! indicators from saved traces.
//!
//! Exit codes: 0 success, 1 invalid input, 2 an expectation passed on the
//! command line was violated, 3 internal failure.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bounds;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qscn::units::{BitRate, Seconds};

pub use bounds::Expectations;

#[derive(Parser)]
#[command(name = "qscn", version, about = "Key-pool network simulator for QKD-secured relay networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and print every link's key rate.
    Validate { scenario: PathBuf },
    /// Simulate one scenario and write trace, summary and indicators.
    Run(RunArgs),
    /// Replicate a scenario over seeds and demands in parallel.
    Sweep(SweepArgs),
    /// Compare the fluid-model capability with a bisection over simulations.
    Capability(CapabilityArgs),
    /// Secure key rate against fiber length, as CSV.
    RateTable(RateTableArgs),
    /// Recompute summary and indicators from a saved trace directory.
    Analyze(AnalyzeArgs),
}

/// Overrides applied on top of the scenario file.
#[derive(Args, Clone)]
struct Overrides {
    /// Per-pair offered load, e.g. `100kbps`.
    #[arg(long)]
    demand: Option<BitRate>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time, e.g. `500s`.
    #[arg(long)]
    horizon: Option<Seconds>,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory.
    #[arg(long, short, default_value = "qscn-out")]
    out: PathBuf,
    /// Indicator window length.
    #[arg(long, default_value = "5s")]
    window: Seconds,
    #[command(flatten)]
    expect: Expectations,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    /// Seeds as a list (`1,2,5`) or an inclusive range (`1..10`).
    #[arg(long, default_value = "1..10")]
    seeds: String,
    /// Per-pair demands; defaults to the scenario's own.
    #[arg(long, value_delimiter = ',')]
    demands: Vec<BitRate>,
    #[arg(long)]
    horizon: Option<Seconds>,
    #[arg(long, short, default_value = "qscn-sweep")]
    out: PathBuf,
    /// Also keep every replication's trace under `<out>/runs/`.
    #[arg(long)]
    keep_traces: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shares {
    PerPair,
    NormalizedTotal,
}

#[derive(Args)]
struct CapabilityArgs {
    scenario: PathBuf,
    /// Bisection stops once the bracket is narrower than this.
    #[arg(long, default_value = "0.5kbps")]
    tol: BitRate,
    /// Stable bracket end; default half the analytic value.
    #[arg(long)]
    low: Option<BitRate>,
    /// Unstable bracket end; default 1.5 times the analytic value.
    #[arg(long)]
    high: Option<BitRate>,
    /// Stability horizon; default `drain-multiple` pool drain times.
    #[arg(long)]
    horizon: Option<Seconds>,
    #[arg(long, default_value_t = 40.0)]
    drain_multiple: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// How the analytic value spreads demand over pairs.
    #[arg(long, value_enum, default_value = "per-pair")]
    shares: Shares,
    /// Skip the simulations.
    #[arg(long)]
    analytic_only: bool,
    /// Fail (exit 2) when the two values differ by more than this fraction.
    #[arg(long)]
    expect_within: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RateTableArgs {
    #[arg(long, default_value = "0km")]
    from: qscn::units::Kilometers,
    #[arg(long, default_value = "200km")]
    to: qscn::units::Kilometers,
    #[arg(long, default_value = "5km")]
    step: qscn::units::Kilometers,
    /// Take device parameters from this scenario instead of the reference set.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Link of `--scenario` whose device to use; default the first.
    #[arg(long, requires = "scenario")]
    link: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    #[arg(long, default_value = "5s")]
    window: Seconds,
    /// Write summary.json and indicators.csv here; default prints the summary.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    expect: Expectations,
}

/// Failure classes, one per non-zero exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Expectation(Vec<String>),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Expectation(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

pub type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    // usage errors are invalid input (1); clap's own default would be 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Validate { scenario } => commands::validate(&scenario),
        Command::Run(args) => commands::run(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Capability(args) => commands::capability(args),
        Command::RateTable(args) => commands::rate_table(args),
        Command::Analyze(args) => commands::analyze(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Invalid(e) => eprintln!("error: {e:#}"),
                Failure::Internal(e) => eprintln!("internal error: {e:#}"),
                Failure::Expectation(violations) => {
                    for v in violations {
                        eprintln!("expectation violated: {v}");
                    }
                }
            }
            ExitCode::from(failure.code())
        }
    }
}
