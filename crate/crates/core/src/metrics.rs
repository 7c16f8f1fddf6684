//! Outcome classification and identification-rate aggregation.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::search::{Decision, Stage, Transaction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no outcomes to aggregate")]
    Empty,
    #[error("gallery size must be positive")]
    ZeroGallery,
    #[error("need at least 2 reports for a spread, got {0}")]
    InsufficientData(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OutcomeCategory {
    /// True identification.
    TI,
    /// Enrolled probe matched to someone else.
    EFPI,
    /// Unenrolled probe left unmatched.
    TNI,
    /// Enrolled probe left unmatched.
    FNI,
    /// Unenrolled probe matched.
    FPI,
}

impl OutcomeCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeCategory::TI => "TI",
            OutcomeCategory::EFPI => "EFPI",
            OutcomeCategory::TNI => "TNI",
            OutcomeCategory::FNI => "FNI",
            OutcomeCategory::FPI => "FPI",
        }
    }
}

impl fmt::Display for OutcomeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "TI" => OutcomeCategory::TI,
            "EFPI" => OutcomeCategory::EFPI,
            "TNI" => OutcomeCategory::TNI,
            "FNI" => OutcomeCategory::FNI,
            "FPI" => OutcomeCategory::FPI,
            other => return Err(format!("unknown outcome `{other}`")),
        })
    }
}

pub fn classify_outcome(tx: &Transaction, enrolled: bool) -> OutcomeCategory {
    match (&tx.decision, enrolled) {
        (Decision::Match { identified, .. }, true) if *identified == tx.probe_subject => OutcomeCategory::TI,
        (Decision::Match { .. }, true) => OutcomeCategory::EFPI,
        (Decision::NonMatch, true) => OutcomeCategory::FNI,
        (Decision::Match { .. }, false) => OutcomeCategory::FPI,
        (Decision::NonMatch, false) => OutcomeCategory::TNI,
    }
}

/// What aggregation needs from one classified transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub category: OutcomeCategory,
    pub pairs_examined: u64,
    pub rotations_evaluated: u64,
    pub stage_reached: Stage,
}

impl Outcome {
    pub fn of(tx: &Transaction, enrolled: bool) -> Self {
        Outcome {
            category: classify_outcome(tx, enrolled),
            pairs_examined: tx.pairs_examined,
            rotations_evaluated: tx.rotations_evaluated,
            stage_reached: tx.stage_reached,
        }
    }
}

/// Rates for one experimental cell. Rates over an empty population are
/// `None`, which is how FPIR and TNIR appear for closed sets.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub n_enrolled_probes: usize,
    pub n_unenrolled_probes: usize,
    pub n_ti: usize,
    pub n_efpi: usize,
    pub n_fni: usize,
    pub n_fpi: usize,
    pub n_tni: usize,
    pub tpir: Option<f64>,
    pub fnir: Option<f64>,
    pub e_fpir: Option<f64>,
    pub fpir: Option<f64>,
    pub tnir: Option<f64>,
    /// EFPI count over all probes, enrolled or not.
    pub e_fpir_all_probes: f64,
    /// FPI count over all probes; `None` for closed sets.
    pub fpir_all_probes: Option<f64>,
    pub mean_normalized_comparisons: f64,
    pub std_normalized_comparisons: f64,
    /// Rotation evaluations relative to a full 1:N scan under the same policy.
    pub mean_normalized_rotations: f64,
    /// Share of transactions that reached a wide second pass.
    pub wide_stage_fraction: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Aggregates one cell. `full_scan_shifts` is the shift count a 1:N scan
/// uses per pair under the cell's policy.
pub fn aggregate_metrics(
    outcomes: &[Outcome],
    gallery_size: usize,
    full_scan_shifts: u32,
) -> Result<MetricsReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    if gallery_size == 0 {
        return Err(MetricsError::ZeroGallery);
    }
    let count = |c: OutcomeCategory| outcomes.iter().filter(|o| o.category == c).count();
    let (n_ti, n_efpi, n_fni, n_fpi, n_tni) = (
        count(OutcomeCategory::TI),
        count(OutcomeCategory::EFPI),
        count(OutcomeCategory::FNI),
        count(OutcomeCategory::FPI),
        count(OutcomeCategory::TNI),
    );
    let enrolled = n_ti + n_efpi + n_fni;
    let unenrolled = n_fpi + n_tni;
    let total = outcomes.len();

    let n = gallery_size as f64;
    let normalized: Vec<f64> = outcomes.iter().map(|o| o.pairs_examined as f64 / n).collect();
    let mean = normalized.iter().sum::<f64>() / total as f64;
    let var = normalized.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / total as f64;
    let full_cost = n * full_scan_shifts as f64;
    let rot = outcomes.iter().map(|o| o.rotations_evaluated as f64 / full_cost).sum::<f64>() / total as f64;
    let wide = outcomes.iter().filter(|o| o.stage_reached == Stage::Wide).count();

    Ok(MetricsReport {
        n_enrolled_probes: enrolled,
        n_unenrolled_probes: unenrolled,
        n_ti,
        n_efpi,
        n_fni,
        n_fpi,
        n_tni,
        tpir: ratio(n_ti, enrolled),
        fnir: ratio(n_fni, enrolled),
        e_fpir: ratio(n_efpi, enrolled),
        fpir: ratio(n_fpi, unenrolled),
        tnir: ratio(n_tni, unenrolled),
        e_fpir_all_probes: n_efpi as f64 / total as f64,
        fpir_all_probes: (unenrolled > 0).then(|| n_fpi as f64 / total as f64),
        mean_normalized_comparisons: mean,
        std_normalized_comparisons: var.sqrt(),
        mean_normalized_rotations: rot,
        wide_stage_fraction: wide as f64 / total as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    /// Standard error of the mean.
    pub sem: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpreadSummary {
    pub n_reports: usize,
    /// (metric name, spread); `None` when the metric is undefined in any
    /// report.
    pub metrics: Vec<(&'static str, Option<Spread>)>,
}

impl SpreadSummary {
    pub fn get(&self, name: &str) -> Option<Spread> {
        self.metrics.iter().find(|(n, _)| *n == name).and_then(|(_, s)| *s)
    }
}

type Getter = fn(&MetricsReport) -> Option<f64>;

const SPREAD_METRICS: [(&str, Getter); 9] = [
    ("tpir", |r| r.tpir),
    ("fnir", |r| r.fnir),
    ("e_fpir", |r| r.e_fpir),
    ("fpir", |r| r.fpir),
    ("tnir", |r| r.tnir),
    ("e_fpir_all_probes", |r| Some(r.e_fpir_all_probes)),
    ("fpir_all_probes", |r| r.fpir_all_probes),
    ("mean_normalized_comparisons", |r| Some(r.mean_normalized_comparisons)),
    ("mean_normalized_rotations", |r| Some(r.mean_normalized_rotations)),
];

fn spread(values: &[f64]) -> Spread {
    let n = values.len() as f64;
    if values.iter().all(|v| *v == values[0]) {
        return Spread { mean: values[0], std: 0.0, sem: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Spread { mean, std, sem: std / n.sqrt() }
}

/// Mean, standard deviation and standard error of each metric across
/// permutations of one cell.
pub fn permutation_spread(reports: &[MetricsReport]) -> Result<SpreadSummary, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::InsufficientData(reports.len()));
    }
    let metrics = SPREAD_METRICS
        .iter()
        .map(|&(name, get)| {
            let values: Option<Vec<f64>> = reports.iter().map(get).collect();
            (name, values.map(|v| spread(&v)))
        })
        .collect();
    Ok(SpreadSummary { n_reports: reports.len(), metrics })
}
