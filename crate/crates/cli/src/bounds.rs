use clap::Args;
use qscn::metrics::RunSummary;
use qscn::units::{BitRate, Seconds};

/// Bounds a run's summary must satisfy; any violation exits with code 2.
#[derive(Args, Debug, Default)]
pub struct Expectations {
    /// No link may break within the horizon.
    #[arg(long)]
    pub expect_stable: bool,
    /// The first break must happen (and no earlier than this).
    #[arg(long)]
    pub min_operation_time: Option<Seconds>,
    #[arg(long)]
    pub max_operation_time: Option<Seconds>,
    /// Name of the link that must break first.
    #[arg(long)]
    pub first_break_link: Option<String>,
    #[arg(long)]
    pub min_pdr: Option<f64>,
    #[arg(long)]
    pub max_pdr: Option<f64>,
    #[arg(long)]
    pub min_rcost: Option<BitRate>,
    #[arg(long)]
    pub max_rcost: Option<BitRate>,
    #[arg(long)]
    pub min_efficiency: Option<f64>,
    #[arg(long)]
    pub max_efficiency: Option<f64>,
}

fn range(out: &mut Vec<String>, what: &str, value: Option<f64>, lo: Option<f64>, hi: Option<f64>) {
    if lo.is_none() && hi.is_none() {
        return;
    }
    let Some(v) = value else {
        out.push(format!("{what} is undefined for this run"));
        return;
    };
    if let Some(lo) = lo.filter(|&lo| v < lo) {
        out.push(format!("{what} = {v} < {lo}"));
    }
    if let Some(hi) = hi.filter(|&hi| v > hi) {
        out.push(format!("{what} = {v} > {hi}"));
    }
}

impl Expectations {
    pub fn check(&self, s: &RunSummary) -> Vec<String> {
        let mut out = Vec::new();
        if self.expect_stable {
            if let Some(b) = &s.first_break {
                out.push(format!("link {} broke at {} s", b.link, b.time));
            }
        }
        if let Some(name) = &self.first_break_link {
            match &s.first_break {
                Some(b) if &b.link == name => {}
                Some(b) => out.push(format!("first break on {} instead of {name}", b.link)),
                None => out.push(format!("expected {name} to break, nothing broke")),
            }
        }
        range(
            &mut out,
            "operation time",
            s.its.operation_time,
            self.min_operation_time.map(|x| x.0),
            self.max_operation_time.map(|x| x.0),
        );
        range(&mut out, "PDR", s.pdr, self.min_pdr, self.max_pdr);
        range(&mut out, "RCost", Some(s.rcost_steady), self.min_rcost.map(|x| x.0), self.max_rcost.map(|x| x.0));
        range(&mut out, "efficiency", s.its.efficiency, self.min_efficiency, self.max_efficiency);
        out
    }
}
