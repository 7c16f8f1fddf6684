//! CSV artifacts written by a run and read back by `report`.

use std::cmp::Ordering;
use std::path::Path;

use csv::StringRecord;

use super::RunnerError;
use crate::metrics::{MetricsReport, Outcome, OutcomeCategory};
use crate::scenario::SetType;
use crate::search::{Decision, Stage, Strategy, Transaction};
use crate::templates::Polarity;

pub const RESULTS_FILE: &str = "results.csv";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const SCENARIOS_FILE: &str = "scenarios.csv";
pub const TRANSACTIONS_DIR: &str = "transactions";
pub const POPULATION_DIR: &str = "population";

const NA: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn field<'a>(r: &'a StringRecord, headers: &[&str], name: &str) -> Result<&'a str, String> {
    let i = headers.iter().position(|h| *h == name).ok_or_else(|| format!("missing column `{name}`"))?;
    r.get(i).ok_or_else(|| format!("short row, no `{name}`"))
}

fn parse<T: std::str::FromStr>(r: &StringRecord, headers: &[&str], name: &str) -> Result<T, String> {
    let s = field(r, headers, name)?;
    s.parse().map_err(|_| format!("bad `{name}` value `{s}`"))
}

fn parse_opt(r: &StringRecord, headers: &[&str], name: &str) -> Result<Option<f64>, String> {
    match field(r, headers, name)? {
        NA => Ok(None),
        _ => parse(r, headers, name).map(Some),
    }
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), RunnerError> {
    let csv_err = |e: csv::Error| RunnerError::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| RunnerError::io(path, e))
}

pub(crate) fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<StringRecord>), RunnerError> {
    let csv_err = |e: csv::Error| RunnerError::Csv { path: path.to_path_buf(), source: e };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r.records().collect::<Result<_, _>>().map_err(csv_err)?;
    Ok((headers, rows))
}

pub const RESULTS_HEADER: [&str; 27] = [
    "gallery_size",
    "set_type",
    "strategy",
    "accuracy_target",
    "rotation_policy",
    "permutation_index",
    "matcher_polarity",
    "threshold",
    "unattainable",
    "n_enrolled_probes",
    "n_unenrolled_probes",
    "n_ti",
    "n_efpi",
    "n_fni",
    "n_fpi",
    "n_tni",
    "tpir",
    "fnir",
    "e_fpir",
    "fpir",
    "tnir",
    "e_fpir_all_probes",
    "fpir_all_probes",
    "mean_normalized_comparisons",
    "std_normalized_comparisons",
    "mean_normalized_rotations",
    "wide_stage_fraction",
];

/// One row of the results table: a (size, set type, strategy, target,
/// policy, permutation) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub gallery_size: usize,
    pub set_type: SetType,
    pub strategy: Strategy,
    pub accuracy_target: f64,
    pub rotation_policy: String,
    pub permutation_index: usize,
    pub matcher_polarity: Polarity,
    pub threshold: f64,
    pub unattainable: bool,
    pub metrics: MetricsReport,
}

impl ResultRow {
    pub fn record(&self) -> Vec<String> {
        let m = &self.metrics;
        vec![
            self.gallery_size.to_string(),
            self.set_type.to_string(),
            self.strategy.to_string(),
            self.accuracy_target.to_string(),
            self.rotation_policy.clone(),
            self.permutation_index.to_string(),
            self.matcher_polarity.to_string(),
            self.threshold.to_string(),
            self.unattainable.to_string(),
            m.n_enrolled_probes.to_string(),
            m.n_unenrolled_probes.to_string(),
            m.n_ti.to_string(),
            m.n_efpi.to_string(),
            m.n_fni.to_string(),
            m.n_fpi.to_string(),
            m.n_tni.to_string(),
            opt(m.tpir),
            opt(m.fnir),
            opt(m.e_fpir),
            opt(m.fpir),
            opt(m.tnir),
            m.e_fpir_all_probes.to_string(),
            opt(m.fpir_all_probes),
            m.mean_normalized_comparisons.to_string(),
            m.std_normalized_comparisons.to_string(),
            m.mean_normalized_rotations.to_string(),
            m.wide_stage_fraction.to_string(),
        ]
    }

    pub fn from_record(r: &StringRecord, headers: &[&str]) -> Result<Self, String> {
        let h = headers;
        Ok(ResultRow {
            gallery_size: parse(r, h, "gallery_size")?,
            set_type: parse(r, h, "set_type")?,
            strategy: parse(r, h, "strategy")?,
            accuracy_target: parse(r, h, "accuracy_target")?,
            rotation_policy: field(r, h, "rotation_policy")?.to_string(),
            permutation_index: parse(r, h, "permutation_index")?,
            matcher_polarity: parse(r, h, "matcher_polarity")?,
            threshold: parse(r, h, "threshold")?,
            unattainable: parse(r, h, "unattainable")?,
            metrics: MetricsReport {
                n_enrolled_probes: parse(r, h, "n_enrolled_probes")?,
                n_unenrolled_probes: parse(r, h, "n_unenrolled_probes")?,
                n_ti: parse(r, h, "n_ti")?,
                n_efpi: parse(r, h, "n_efpi")?,
                n_fni: parse(r, h, "n_fni")?,
                n_fpi: parse(r, h, "n_fpi")?,
                n_tni: parse(r, h, "n_tni")?,
                tpir: parse_opt(r, h, "tpir")?,
                fnir: parse_opt(r, h, "fnir")?,
                e_fpir: parse_opt(r, h, "e_fpir")?,
                fpir: parse_opt(r, h, "fpir")?,
                tnir: parse_opt(r, h, "tnir")?,
                e_fpir_all_probes: parse(r, h, "e_fpir_all_probes")?,
                fpir_all_probes: parse_opt(r, h, "fpir_all_probes")?,
                mean_normalized_comparisons: parse(r, h, "mean_normalized_comparisons")?,
                std_normalized_comparisons: parse(r, h, "std_normalized_comparisons")?,
                mean_normalized_rotations: parse(r, h, "mean_normalized_rotations")?,
                wide_stage_fraction: parse(r, h, "wide_stage_fraction")?,
            },
        })
    }

    /// Canonical row order of the results table.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        (self.gallery_size, self.set_type, self.strategy)
            .cmp(&(other.gallery_size, other.set_type, other.strategy))
            .then(self.accuracy_target.total_cmp(&other.accuracy_target))
            .then_with(|| self.rotation_policy.cmp(&other.rotation_policy))
            .then(self.permutation_index.cmp(&other.permutation_index))
    }
}

pub fn write_results(path: &Path, rows: &mut [ResultRow]) -> Result<(), RunnerError> {
    rows.sort_by(ResultRow::canonical_cmp);
    write_csv(path, &RESULTS_HEADER, rows.iter().map(ResultRow::record))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, RunnerError> {
    let (headers, rows) = read_csv(path)?;
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    rows.iter()
        .map(|r| ResultRow::from_record(r, &h).map_err(|msg| RunnerError::Report(format!("{}: {msg}", path.display()))))
        .collect()
}

pub const CALIBRATION_HEADER: [&str; 7] =
    ["matcher_polarity", "rotation_policy", "target", "threshold", "achieved_fraction", "n_impostor_scores", "unattainable"];

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRow {
    pub matcher_polarity: Polarity,
    pub rotation_policy: String,
    pub target: f64,
    pub threshold: f64,
    pub achieved_fraction: f64,
    pub n_impostor_scores: usize,
    pub unattainable: bool,
}

impl CalibrationRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.matcher_polarity.to_string(),
            self.rotation_policy.clone(),
            self.target.to_string(),
            self.threshold.to_string(),
            self.achieved_fraction.to_string(),
            self.n_impostor_scores.to_string(),
            self.unattainable.to_string(),
        ]
    }

    pub fn from_record(r: &StringRecord, h: &[&str]) -> Result<Self, String> {
        Ok(CalibrationRow {
            matcher_polarity: parse(r, h, "matcher_polarity")?,
            rotation_policy: field(r, h, "rotation_policy")?.to_string(),
            target: parse(r, h, "target")?,
            threshold: parse(r, h, "threshold")?,
            achieved_fraction: parse(r, h, "achieved_fraction")?,
            n_impostor_scores: parse(r, h, "n_impostor_scores")?,
            unattainable: parse(r, h, "unattainable")?,
        })
    }
}

pub fn read_calibration(path: &Path) -> Result<Vec<CalibrationRow>, RunnerError> {
    let (headers, rows) = read_csv(path)?;
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    rows.iter()
        .map(|r| CalibrationRow::from_record(r, &h).map_err(|msg| RunnerError::Report(format!("{}: {msg}", path.display()))))
        .collect()
}

pub const SCENARIOS_HEADER: [&str; 7] =
    ["scenario_id", "gallery_size", "set_type", "permutation_index", "seed", "gallery_manifest", "probe_manifest"];

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioRow {
    pub scenario_id: String,
    pub gallery_size: usize,
    pub set_type: SetType,
    pub permutation_index: usize,
    pub seed: u64,
    pub gallery_manifest: String,
    pub probe_manifest: String,
}

impl ScenarioRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.scenario_id.clone(),
            self.gallery_size.to_string(),
            self.set_type.to_string(),
            self.permutation_index.to_string(),
            self.seed.to_string(),
            self.gallery_manifest.clone(),
            self.probe_manifest.clone(),
        ]
    }

    pub fn from_record(r: &StringRecord, h: &[&str]) -> Result<Self, String> {
        Ok(ScenarioRow {
            scenario_id: field(r, h, "scenario_id")?.to_string(),
            gallery_size: parse(r, h, "gallery_size")?,
            set_type: parse(r, h, "set_type")?,
            permutation_index: parse(r, h, "permutation_index")?,
            seed: parse(r, h, "seed")?,
            gallery_manifest: field(r, h, "gallery_manifest")?.to_string(),
            probe_manifest: field(r, h, "probe_manifest")?.to_string(),
        })
    }
}

pub fn read_scenarios(path: &Path) -> Result<Vec<ScenarioRow>, RunnerError> {
    let (headers, rows) = read_csv(path)?;
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    rows.iter()
        .map(|r| ScenarioRow::from_record(r, &h).map_err(|msg| RunnerError::Report(format!("{}: {msg}", path.display()))))
        .collect()
}

pub const TRANSACTIONS_HEADER: [&str; 13] = [
    "scenario_id",
    "strategy",
    "probe_subject",
    "decision",
    "identified_subject",
    "score",
    "gallery_index",
    "pairs_examined",
    "rotations_evaluated",
    "stage_reached",
    "rotation_policy",
    "accuracy_target",
    "enrolled",
];

pub(crate) fn transaction_record(
    scenario_id: &str,
    strategy: Strategy,
    tx: &Transaction,
    rotation_policy: &str,
    accuracy_target: f64,
    enrolled: bool,
) -> Vec<String> {
    let (decision, identified, score, index) = match &tx.decision {
        Decision::Match { identified, score, gallery_index } => {
            ("match", identified.to_string(), score.value().to_string(), gallery_index.to_string())
        }
        Decision::NonMatch => ("nonmatch", NA.to_string(), NA.to_string(), NA.to_string()),
    };
    vec![
        scenario_id.to_string(),
        strategy.to_string(),
        tx.probe_subject.to_string(),
        decision.to_string(),
        identified,
        score,
        index,
        tx.pairs_examined.to_string(),
        tx.rotations_evaluated.to_string(),
        tx.stage_reached.as_str().to_string(),
        rotation_policy.to_string(),
        accuracy_target.to_string(),
        enrolled.to_string(),
    ]
}

/// A transaction-log row reduced to what aggregation needs.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LoggedOutcome {
    pub strategy: Strategy,
    pub rotation_policy: String,
    pub accuracy_target: f64,
    pub outcome: Outcome,
}

pub(crate) fn logged_outcome(r: &StringRecord, h: &[&str]) -> Result<LoggedOutcome, String> {
    let enrolled: bool = parse(r, h, "enrolled")?;
    let matched = match field(r, h, "decision")? {
        "match" => true,
        "nonmatch" => false,
        other => return Err(format!("bad decision `{other}`")),
    };
    let own = matched && field(r, h, "identified_subject")? == field(r, h, "probe_subject")?;
    let category = match (enrolled, matched, own) {
        (true, true, true) => OutcomeCategory::TI,
        (true, true, false) => OutcomeCategory::EFPI,
        (true, false, _) => OutcomeCategory::FNI,
        (false, true, _) => OutcomeCategory::FPI,
        (false, false, _) => OutcomeCategory::TNI,
    };
    Ok(LoggedOutcome {
        strategy: parse(r, h, "strategy")?,
        rotation_policy: field(r, h, "rotation_policy")?.to_string(),
        accuracy_target: parse(r, h, "accuracy_target")?,
        outcome: Outcome {
            category,
            pairs_examined: parse(r, h, "pairs_examined")?,
            rotations_evaluated: parse(r, h, "rotations_evaluated")?,
            stage_reached: parse::<Stage>(r, h, "stage_reached")?,
        },
    })
}
