//! Experiment orchestration: population, calibration, scenario sweep and
//! result artifacts.

mod config;
mod output;
mod table;

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use thiserror::Error;

pub use config::ExperimentConfig;
pub use output::{
    read_calibration, read_results, read_scenarios, write_results, CalibrationRow, ResultRow, ScenarioRow,
    CALIBRATION_FILE, CALIBRATION_HEADER, POPULATION_DIR, RESULTS_FILE, RESULTS_HEADER, SCENARIOS_FILE,
    SCENARIOS_HEADER, TRANSACTIONS_DIR, TRANSACTIONS_HEADER,
};

use crate::calibration::{CalibratedThreshold, CalibrationError, ImpostorTail};
use crate::metrics::{aggregate_metrics, MetricsError, Outcome};
use crate::rng::{self, tag};
use crate::scenario::{
    build_closed_probeset, build_gallery, build_open_probeset, random_order, Gallery, ProbeSet, ScenarioError, SetType,
};
use crate::search::{scan_one_to_first_multi, scan_one_to_n_multi, Pass, SearchError, Strategy};
use crate::synth::{generate_population, sample_path, write_population, Population, SynthError};
use crate::templates::{RotationPolicy, ShiftRange, Template, TemplateError, Threshold};
use output::{logged_outcome, read_csv, transaction_record, write_csv};
use table::ScoreTable;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("scenario {cell}: {source}")]
    Scenario { cell: String, source: ScenarioError },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("report: {0}")]
    Report(String),
}

impl RunnerError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        RunnerError::Io { path: path.to_path_buf(), source }
    }
}

fn set_tag(set_type: SetType) -> u64 {
    match set_type {
        SetType::Closed => tag::CLOSED_PROBES,
        SetType::Open => tag::OPEN_PROBES,
    }
}

pub fn build_population(cfg: &ExperimentConfig) -> Result<Population, RunnerError> {
    let params = crate::synth::PopulationParams { seed: cfg.seed, ..cfg.population.clone() };
    Ok(generate_population(&params, cfg.population_size())?)
}

/// The gallery of size `size`; shared by both set types and all
/// permutations.
pub fn scenario_gallery(cfg: &ExperimentConfig, pool: &Population, size: usize) -> Result<Gallery, RunnerError> {
    build_gallery(pool, size, &mut rng::stream(cfg.seed, &[tag::GALLERY, size as u64]))
        .map_err(|source| RunnerError::Scenario { cell: format!("gallery_size={size}"), source })
}

pub fn scenario_probes(
    cfg: &ExperimentConfig,
    pool: &Population,
    gallery: &Gallery,
    set_type: SetType,
) -> Result<ProbeSet, RunnerError> {
    let mut rng = rng::stream(cfg.seed, &[set_tag(set_type), gallery.len() as u64]);
    match set_type {
        SetType::Closed => build_closed_probeset(pool, gallery, cfg.probe_cap(gallery.len()), &mut rng),
        SetType::Open => build_open_probeset(pool, gallery, &mut rng),
    }
    .map_err(|source| RunnerError::Scenario { cell: format!("gallery_size={} set_type={set_type}", gallery.len()), source })
}

/// Gallery order of a permutation: position `i` holds entry `order[i]`.
/// Permutation 0 is the draw order.
pub fn permutation_order(cfg: &ExperimentConfig, size: usize, set_type: SetType, permutation: usize) -> Vec<usize> {
    if permutation == 0 {
        return (0..size).collect();
    }
    random_order(size, &mut rng::stream(cfg.seed, &[tag::PERMUTATION, size as u64, set_tag(set_type), permutation as u64]))
}

/// The scenario thresholds are calibrated on: the largest gallery with its
/// closed probe set.
pub fn calibration_scenario(cfg: &ExperimentConfig, pool: &Population) -> Result<(Gallery, ProbeSet), RunnerError> {
    let gallery = scenario_gallery(cfg, pool, cfg.largest_gallery())?;
    let probes = scenario_probes(cfg, pool, &gallery, SetType::Closed)?;
    Ok((gallery, probes))
}

pub fn scenario_id(size: usize, set_type: SetType, permutation: usize) -> String {
    format!("n{size:05}-{set_type}-p{permutation:02}")
}

/// Thresholds of one rotation policy, aligned with the config's targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyCalibration {
    pub policy: RotationPolicy,
    pub thresholds: Vec<CalibratedThreshold>,
}

impl PolicyCalibration {
    pub fn rows(&self) -> impl Iterator<Item = CalibrationRow> + '_ {
        self.thresholds.iter().map(|c| CalibrationRow {
            matcher_polarity: c.threshold.polarity,
            rotation_policy: self.policy.label(),
            target: c.target.value(),
            threshold: c.threshold.value,
            achieved_fraction: c.achieved_fraction,
            n_impostor_scores: c.n_scores,
            unattainable: c.unattainable,
        })
    }
}

fn sweep_ranges(cfg: &ExperimentConfig) -> Vec<ShiftRange> {
    let mut ranges: Vec<ShiftRange> = Vec::new();
    for p in &cfg.rotation_policies {
        for r in [p.narrow, p.wide] {
            if !ranges.contains(&r) {
                ranges.push(r);
            }
        }
    }
    ranges
}

fn calibrate_from_table(
    cfg: &ExperimentConfig,
    table: &ScoreTable,
    gallery: &Gallery,
    probes: &ProbeSet,
) -> Result<Vec<PolicyCalibration>, RunnerError> {
    let polarity = cfg.matcher;
    cfg.rotation_policies
        .iter()
        .map(|policy| {
            let slot = table.slot(policy.effective_range());
            let mut tail = ImpostorTail::new(polarity, &cfg.accuracy_targets, probes.len() * gallery.len());
            for (q, probe) in probes.probes.iter().enumerate() {
                let scores = gallery.entries().iter().enumerate().filter_map(|(e, entry)| {
                    if entry.subject == probe.subject {
                        return None;
                    }
                    table.get(q, slot, e).map(|c| c.score(polarity).value())
                });
                tail.extend(scores);
            }
            if tail.is_empty() {
                return Err(CalibrationError::EmptyInput.into());
            }
            let thresholds = cfg.accuracy_targets.iter().map(|&t| tail.threshold(t)).collect();
            Ok(PolicyCalibration { policy: *policy, thresholds })
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<(), RunnerError> {
    fs::create_dir_all(path).map_err(|e| RunnerError::io(path, e))
}

fn write_calibration(dir: &Path, calibration: &[PolicyCalibration]) -> Result<(), RunnerError> {
    let rows = calibration.iter().flat_map(|c| c.rows().map(|r| r.record()));
    write_csv(&dir.join(CALIBRATION_FILE), &CALIBRATION_HEADER, rows)
}

/// Writes the population under `output_dir/population`.
pub fn generate(cfg: &ExperimentConfig) -> Result<(Population, PathBuf), RunnerError> {
    let pool = build_population(cfg)?;
    let manifest = write_population(&cfg.output_dir.join(POPULATION_DIR), &pool)?;
    info!("population: {} subjects, {} samples", pool.subjects.len(), pool.sample_count());
    Ok((pool, manifest))
}

/// Calibrates every policy and writes `calibration.csv`.
pub fn calibrate(cfg: &ExperimentConfig) -> Result<Vec<PolicyCalibration>, RunnerError> {
    cfg.validate()?;
    create_dir(&cfg.output_dir)?;
    let pool = if cfg.write_population { generate(cfg)?.0 } else { build_population(cfg)? };
    let (gallery, probes) = calibration_scenario(cfg, &pool)?;
    let table = ScoreTable::compute(&gallery, &probes, &sweep_ranges(cfg))?;
    let calibration = calibrate_from_table(cfg, &table, &gallery, &probes)?;
    write_calibration(&cfg.output_dir, &calibration)?;
    Ok(calibration)
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub results: Vec<ResultRow>,
    pub calibration: Vec<PolicyCalibration>,
    pub scenarios: Vec<ScenarioRow>,
    pub results_path: PathBuf,
}

/// Locates each sample in the pool: (subject index, sample index).
fn sample_index(pool: &Population) -> HashMap<*const Template, (usize, usize)> {
    let mut map = HashMap::new();
    for (s, subject) in pool.subjects.iter().enumerate() {
        for (k, t) in subject.samples.iter().enumerate() {
            map.insert(Arc::as_ptr(t), (s, k));
        }
    }
    map
}

struct ManifestWriter<'a> {
    dir: &'a Path,
    pool: &'a Population,
    index: HashMap<*const Template, (usize, usize)>,
    with_paths: bool,
}

impl ManifestWriter<'_> {
    fn path(&self, t: &Arc<Template>) -> (String, String) {
        let (s, k) = self.index[&Arc::as_ptr(t)];
        let path = if self.with_paths {
            Path::new(POPULATION_DIR).join(sample_path(&self.pool.subjects[s].id, k)).to_string_lossy().into_owned()
        } else {
            "NA".to_string()
        };
        (k.to_string(), path)
    }

    fn write(&self, id: &str, gallery: &Gallery, order: &[usize], probes: &ProbeSet) -> Result<(String, String), RunnerError> {
        let rel = Path::new("scenarios").join(id);
        create_dir(&self.dir.join(&rel))?;
        let g = rel.join("gallery.csv");
        let rows = order.iter().enumerate().map(|(pos, &e)| {
            let entry = &gallery.entries()[e];
            let (k, path) = self.path(&entry.template);
            vec![pos.to_string(), entry.subject.to_string(), k, path]
        });
        write_csv(&self.dir.join(&g), &["position", "subject_id", "sample_index", "path"], rows)?;
        let p = rel.join("probes.csv");
        let rows = probes.probes.iter().map(|probe| {
            let (k, path) = self.path(&probe.template);
            vec![probe.subject.to_string(), probe.enrolled.to_string(), k, path]
        });
        write_csv(&self.dir.join(&p), &["subject_id", "enrolled", "sample_index", "path"], rows)?;
        Ok((g.to_string_lossy().into_owned(), p.to_string_lossy().into_owned()))
    }
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    calibration: &'a [PolicyCalibration],
    gallery: &'a Gallery,
    probes: &'a ProbeSet,
    table: &'a ScoreTable,
}

impl Cell<'_> {
    /// Runs every (policy, strategy, target) for one permutation; returns
    /// result rows and, when logging, transaction records.
    fn run(&self, id: &str, permutation: usize, order: &[usize]) -> Result<(Vec<ResultRow>, Vec<Vec<String>>), RunnerError> {
        let cfg = self.cfg;
        let n = self.gallery.len();
        let entries = self.gallery.entries();
        let mut rows = Vec::new();
        let mut log = Vec::new();
        for cal in self.calibration {
            let policy = cal.policy;
            let label = policy.label();
            let thresholds: Vec<Threshold> = cal.thresholds.iter().map(|c| c.threshold).collect();
            let (narrow, wide) = (self.table.slot(policy.narrow), self.table.slot(policy.wide));
            let scans: Vec<_> = (0..self.probes.len())
                .into_par_iter()
                .map(|q| {
                    let score = |i: usize, pass: Pass| {
                        let slot = match pass {
                            Pass::Narrow => narrow,
                            Pass::Wide => wide,
                        };
                        self.table.get(q, slot, order[i])
                    };
                    cfg.strategies
                        .iter()
                        .map(|s| match s {
                            Strategy::OneToN => scan_one_to_n_multi(n, &policy, &thresholds, score),
                            Strategy::OneToFirst => scan_one_to_first_multi(n, &policy, &thresholds, score),
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            for (si, &strategy) in cfg.strategies.iter().enumerate() {
                for (ti, cal_t) in cal.thresholds.iter().enumerate() {
                    let mut outcomes = Vec::with_capacity(self.probes.len());
                    for (q, probe) in self.probes.probes.iter().enumerate() {
                        let tx = scans[q][si][ti].into_transaction(&probe.subject, &cal_t.threshold, |i| {
                            &entries[order[i]].subject
                        });
                        outcomes.push(Outcome::of(&tx, probe.enrolled));
                        if cfg.emit_transaction_log {
                            log.push(transaction_record(id, strategy, &tx, &label, cal_t.target.value(), probe.enrolled));
                        }
                    }
                    rows.push(ResultRow {
                        gallery_size: n,
                        set_type: self.probes.set_type,
                        strategy,
                        accuracy_target: cal_t.target.value(),
                        rotation_policy: label.clone(),
                        permutation_index: permutation,
                        matcher_polarity: cal_t.threshold.polarity,
                        threshold: cal_t.threshold.value,
                        unattainable: cal_t.unattainable,
                        metrics: aggregate_metrics(&outcomes, n, policy.effective_range().len())?,
                    });
                }
            }
        }
        Ok((rows, log))
    }
}

/// Runs the whole sweep and writes every artifact under `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, RunnerError> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    create_dir(dir)?;
    let pool = if cfg.write_population { generate(cfg)?.0 } else { build_population(cfg)? };
    let ranges = sweep_ranges(cfg);

    let (cal_gallery, cal_probes) = calibration_scenario(cfg, &pool)?;
    info!("calibrating on {} x {} pairs", cal_probes.len(), cal_gallery.len());
    let mut cal_table = Some(ScoreTable::compute(&cal_gallery, &cal_probes, &ranges)?);
    let calibration = calibrate_from_table(cfg, cal_table.as_ref().expect("just built"), &cal_gallery, &cal_probes)?;
    write_calibration(dir, &calibration)?;

    let manifests = ManifestWriter { dir, pool: &pool, index: sample_index(&pool), with_paths: cfg.write_population };
    if cfg.emit_transaction_log {
        create_dir(&dir.join(TRANSACTIONS_DIR))?;
    }
    let mut results = Vec::new();
    let mut scenarios = Vec::new();
    let largest = cfg.largest_gallery();
    for &size in &cfg.gallery_sizes {
        let gallery = scenario_gallery(cfg, &pool, size)?;
        for &set_type in &cfg.set_types {
            let probes = scenario_probes(cfg, &pool, &gallery, set_type)?;
            let table = match (size == largest && set_type == SetType::Closed, cal_table.take()) {
                (true, Some(t)) => t,
                (_, kept) => {
                    cal_table = kept;
                    ScoreTable::compute(&gallery, &probes, &ranges)?
                }
            };
            info!("gallery {size} {set_type}: {} probes", probes.len());
            let cell = Cell { cfg, calibration: &calibration, gallery: &gallery, probes: &probes, table: &table };
            for permutation in 0..cfg.n_permutations {
                let id = scenario_id(size, set_type, permutation);
                let order = permutation_order(cfg, size, set_type, permutation);
                let (gallery_manifest, probe_manifest) = manifests.write(&id, &gallery, &order, &probes)?;
                let (rows, log) = cell.run(&id, permutation, &order)?;
                results.extend(rows);
                if cfg.emit_transaction_log {
                    let path = dir.join(TRANSACTIONS_DIR).join(format!("{id}.csv"));
                    write_csv(&path, &TRANSACTIONS_HEADER, log)?;
                }
                scenarios.push(ScenarioRow {
                    scenario_id: id,
                    gallery_size: size,
                    set_type,
                    permutation_index: permutation,
                    seed: cfg.seed,
                    gallery_manifest,
                    probe_manifest,
                });
            }
        }
    }
    drop(cal_table);

    write_csv(&dir.join(SCENARIOS_FILE), &SCENARIOS_HEADER, scenarios.iter().map(ScenarioRow::record))?;
    let results_path = dir.join(RESULTS_FILE);
    write_results(&results_path, &mut results)?;
    Ok(RunSummary { results, calibration, scenarios, results_path })
}

/// Rebuilds the results table from the transaction logs, scenario
/// descriptors and calibration report of a finished run.
pub fn report(dir: &Path) -> Result<Vec<ResultRow>, RunnerError> {
    let calibration = read_calibration(&dir.join(CALIBRATION_FILE))?;
    let scenarios = read_scenarios(&dir.join(SCENARIOS_FILE))?;
    let threshold_of = |policy: &str, target: f64| {
        calibration
            .iter()
            .find(|c| c.rotation_policy == policy && c.target == target)
            .ok_or_else(|| RunnerError::Report(format!("no calibration for policy {policy} target {target}")))
    };
    let mut results = Vec::new();
    for s in &scenarios {
        let path = dir.join(TRANSACTIONS_DIR).join(format!("{}.csv", s.scenario_id));
        if !path.exists() {
            return Err(RunnerError::Report(format!("missing transaction log {}", path.display())));
        }
        let (headers, records) = read_csv(&path)?;
        let h: Vec<&str> = headers.iter().map(String::as_str).collect();
        // cells in first-seen order, outcomes in log order
        let mut keys: Vec<(Strategy, String, f64)> = Vec::new();
        let mut cells: Vec<Vec<Outcome>> = Vec::new();
        for r in &records {
            let o = logged_outcome(r, &h).map_err(|msg| RunnerError::Report(format!("{}: {msg}", path.display())))?;
            let key = (o.strategy, o.rotation_policy, o.accuracy_target);
            let k = match keys.iter().position(|x| *x == key) {
                Some(k) => k,
                None => {
                    keys.push(key);
                    cells.push(Vec::new());
                    keys.len() - 1
                }
            };
            cells[k].push(o.outcome);
        }
        for (k, outcomes) in cells.into_iter().enumerate() {
            let (strategy, policy_label, target) = &keys[k];
            let policy: RotationPolicy = policy_label.parse()?;
            let cal = threshold_of(policy_label, *target)?;
            results.push(ResultRow {
                gallery_size: s.gallery_size,
                set_type: s.set_type,
                strategy: *strategy,
                accuracy_target: *target,
                rotation_policy: policy_label.clone(),
                permutation_index: s.permutation_index,
                matcher_polarity: cal.matcher_polarity,
                threshold: cal.threshold,
                unattainable: cal.unattainable,
                metrics: aggregate_metrics(&outcomes, s.gallery_size, policy.effective_range().len())?,
            });
        }
    }
    results.sort_by(ResultRow::canonical_cmp);
    Ok(results)
}
