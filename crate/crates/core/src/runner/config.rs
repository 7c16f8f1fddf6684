//! Flat `key = value` experiment configuration.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::RunnerError;
use crate::calibration::{AccuracyTarget, DEFAULT_TARGETS};
use crate::scenario::SetType;
use crate::search::Strategy;
use crate::synth::{PopulationParams, PopulationSize};
use crate::templates::{Geometry, Polarity, RotationPolicy};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub population: PopulationParams,
    /// Base (unaugmented) identities; `None` sizes the pool from the largest
    /// gallery.
    pub base_subjects: Option<usize>,
    pub samples_per_subject: usize,
    pub gallery_sizes: Vec<usize>,
    pub set_types: Vec<SetType>,
    pub strategies: Vec<Strategy>,
    pub rotation_policies: Vec<RotationPolicy>,
    pub accuracy_targets: Vec<AccuracyTarget>,
    pub n_permutations: usize,
    /// Closed probe sets are capped at this multiple of the gallery size.
    pub probe_cap_factor: f64,
    pub matcher: Polarity,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub emit_transaction_log: bool,
    pub write_population: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            population: PopulationParams::default(),
            base_subjects: None,
            samples_per_subject: 6,
            gallery_sizes: (1..=20).map(|k| k * 100).collect(),
            set_types: vec![SetType::Closed, SetType::Open],
            strategies: Strategy::ALL.to_vec(),
            rotation_policies: vec![RotationPolicy::single_stage(7), RotationPolicy::two_stage(7, 21).unwrap()],
            accuracy_targets: DEFAULT_TARGETS.iter().map(|&t| AccuracyTarget::new(t).unwrap()).collect(),
            n_permutations: 5,
            probe_cap_factor: 4.0,
            matcher: Polarity::Dissimilarity,
            seed: 1,
            output_dir: PathBuf::from("out"),
            emit_transaction_log: false,
            write_population: true,
        }
    }
}

fn list<T>(value: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse).collect()
}

fn num<T: FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("cannot parse `{}`", s.trim()))
}

fn boolean(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn geometry(s: &str) -> Result<Geometry, String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("geometry must look like 20x240x2, got `{s}`"));
    }
    Geometry::new(num(parts[0])?, num(parts[1])?, num(parts[2])?).map_err(|e| e.to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, RunnerError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| RunnerError::Config { line: lineno + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value).map_err(|msg| err(format!("{key}: {msg}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, RunnerError> {
        let text = fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let p = &mut self.population;
        match key {
            "seed" => self.seed = num(value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "gallery_sizes" => self.gallery_sizes = list(value, num)?,
            "set_types" => self.set_types = list(value, SetType::from_str)?,
            "strategies" => self.strategies = list(value, Strategy::from_str)?,
            "rotation_policies" => {
                self.rotation_policies = list(value, |s| RotationPolicy::from_str(s).map_err(|e| e.to_string()))?
            }
            "accuracy_targets" => {
                self.accuracy_targets =
                    list(value, |s| AccuracyTarget::new(num(s)?).map_err(|e| e.to_string()))?
            }
            "n_permutations" => self.n_permutations = num(value)?,
            "probe_cap_factor" => self.probe_cap_factor = num(value)?,
            "matcher" => self.matcher = value.parse()?,
            "emit_transaction_log" => self.emit_transaction_log = boolean(value)?,
            "write_population" => self.write_population = boolean(value)?,
            "population.geometry" => p.geometry = geometry(value)?,
            "population.degrees_of_freedom" => p.degrees_of_freedom = num(value)?,
            "population.genuine_flip_prob" => p.genuine_flip_prob = num(value)?,
            "population.max_rotation_offset" => p.max_rotation_offset = num(value)?,
            "population.occlusion_fraction_range" => {
                let v: Vec<f64> = list(value, num)?;
                if v.len() != 2 {
                    return Err("expected two values: min, max".into());
                }
                p.occlusion_fraction_range = (v[0], v[1]);
            }
            "population.base_subjects" => {
                self.base_subjects = if value == "auto" { None } else { Some(num(value)?) }
            }
            "population.samples_per_subject" => self.samples_per_subject = num(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |msg: &str| Err(RunnerError::Invalid(msg.to_string()));
        if self.gallery_sizes.is_empty()
            || self.set_types.is_empty()
            || self.strategies.is_empty()
            || self.rotation_policies.is_empty()
            || self.accuracy_targets.is_empty()
        {
            return bad("gallery_sizes, set_types, strategies, rotation_policies and accuracy_targets must be nonempty");
        }
        if self.gallery_sizes[0] == 0 || self.gallery_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("gallery_sizes must be positive and strictly ascending");
        }
        if self.n_permutations == 0 {
            return bad("n_permutations must be at least 1");
        }
        if !self.probe_cap_factor.is_finite() || self.probe_cap_factor <= 0.0 {
            return bad("probe_cap_factor must be positive");
        }
        if self.samples_per_subject < 2 {
            return bad("population.samples_per_subject must be at least 2");
        }
        let distinct = |n: usize, unique: usize| n == unique;
        if !distinct(self.set_types.len(), self.set_types.iter().collect::<HashSet<_>>().len())
            || !distinct(self.strategies.len(), self.strategies.iter().collect::<HashSet<_>>().len())
            || !distinct(self.rotation_policies.len(), self.rotation_policies.iter().collect::<HashSet<_>>().len())
            || !distinct(
                self.accuracy_targets.len(),
                self.accuracy_targets.iter().map(|t| t.value().to_bits()).collect::<HashSet<_>>().len(),
            )
        {
            return bad("list values must not repeat");
        }
        self.population.validate().map_err(|e| RunnerError::Invalid(e.to_string()))?;
        let cols = self.population.geometry.cols() as i32;
        for p in &self.rotation_policies {
            let r = p.effective_range();
            if r.lo() <= -cols || r.hi() >= cols {
                return Err(RunnerError::Invalid(format!("rotation policy {p} exceeds the {cols} columns")));
            }
        }
        Ok(())
    }

    pub fn largest_gallery(&self) -> usize {
        *self.gallery_sizes.last().expect("validated")
    }

    /// Pool size: explicit, or enough identities for the largest gallery plus
    /// the outsiders its open probe set needs.
    pub fn population_size(&self) -> PopulationSize {
        let base_subjects = self.base_subjects.unwrap_or_else(|| (self.largest_gallery() * 5 / 4).div_ceil(3).max(1));
        PopulationSize { base_subjects, samples_per_subject: self.samples_per_subject }
    }

    pub fn probe_cap(&self, gallery_size: usize) -> usize {
        (self.probe_cap_factor * gallery_size as f64).round() as usize
    }
}
