//! Threshold selection from impostor score distributions.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::scenario::{Gallery, ProbeSet};
use crate::templates::{Polarity, RotatedProbe, RotationPolicy, Score, TemplateError, Threshold};

pub const DEFAULT_TARGETS: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("accuracy target {0} is not strictly between 0 and 1")]
    InvalidTarget(f64),
    #[error("no impostor scores to calibrate on")]
    EmptyInput,
    #[error("impostor scores mix polarities")]
    PolarityMismatch,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Largest fraction of impostor comparisons allowed to meet a threshold.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct AccuracyTarget(f64);

impl AccuracyTarget {
    pub fn new(max_false_match_fraction: f64) -> Result<Self, CalibrationError> {
        if max_false_match_fraction > 0.0 && max_false_match_fraction < 1.0 {
            Ok(AccuracyTarget(max_false_match_fraction))
        } else {
            Err(CalibrationError::InvalidTarget(max_false_match_fraction))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Largest count `k` of `n` scores with `k / n <= target`.
    pub fn allowed(self, n: usize) -> usize {
        let mut k = (self.0 * n as f64).floor() as usize;
        while k < n && (k + 1) as f64 / n as f64 <= self.0 {
            k += 1;
        }
        while k > 0 && k as f64 / n as f64 > self.0 {
            k -= 1;
        }
        k
    }
}

impl fmt::Display for AccuracyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibratedThreshold {
    pub threshold: Threshold,
    pub target: AccuracyTarget,
    /// Fraction of the calibration scores meeting `threshold`.
    pub achieved_fraction: f64,
    /// No observed score fit the budget; `threshold` is the perfect-match
    /// sentinel.
    pub unattainable: bool,
    pub n_scores: usize,
}

/// Best-of-rotations scores of every non-mated probe/reference pair under the
/// policy's effective range. Pairs that never overlap are left out: they can
/// never meet any threshold.
pub fn collect_impostor_scores(
    gallery: &Gallery,
    probes: &ProbeSet,
    policy: &RotationPolicy,
    polarity: Polarity,
) -> Result<Vec<Score>, CalibrationError> {
    if gallery.is_empty() || probes.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    let range = policy.effective_range();
    let per_probe = probes
        .probes
        .par_iter()
        .map(|p| {
            let rotated = RotatedProbe::new(&p.template, range)?;
            let mut out = Vec::with_capacity(gallery.len());
            for e in gallery.entries() {
                if e.subject == p.subject {
                    continue;
                }
                if e.template.geometry() != rotated.geometry() {
                    return Err(TemplateError::Incompatible(rotated.geometry(), e.template.geometry()));
                }
                if let Some(m) = rotated.best_against(&e.template, range) {
                    out.push(m.score(polarity));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, TemplateError>>()?;
    Ok(per_probe.into_iter().flatten().collect())
}

/// Most lenient observed score whose meeting fraction stays within the
/// target. Scores are compared on their own scale: lower quantile for
/// dissimilarities, upper quantile for similarities.
pub fn threshold_for_target(
    scores: &[Score],
    target: AccuracyTarget,
    polarity: Polarity,
) -> Result<CalibratedThreshold, CalibrationError> {
    if scores.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    if scores.iter().any(|s| s.polarity() != polarity) {
        return Err(CalibrationError::PolarityMismatch);
    }
    let mut tail = ImpostorTail::new(polarity, &[target], scores.len());
    tail.extend(scores.iter().map(|s| s.value()));
    Ok(tail.threshold(target))
}

/// Streaming form of [`threshold_for_target`]. Given an upper bound on the
/// number of scores, it keeps only the best ones the most lenient target can
/// reach; past that bound it keeps everything.
#[derive(Clone, Debug)]
pub struct ImpostorTail {
    polarity: Polarity,
    max_target: f64,
    /// Keys (lower is better) of the best scores seen so far, unsorted.
    best: Vec<f64>,
    n: usize,
    /// Scores equal to the perfect-match value.
    n_perfect: usize,
    expected: usize,
    keep: usize,
}

impl ImpostorTail {
    pub fn new(polarity: Polarity, targets: &[AccuracyTarget], expected_len: usize) -> Self {
        let max_target = targets.iter().map(|t| t.value()).fold(0.0, f64::max);
        // the quantile walk needs the k + 1 best keys for k = allowed(n)
        let keep = AccuracyTarget(max_target).allowed(expected_len) + 1;
        ImpostorTail { polarity, max_target, best: Vec::new(), n: 0, n_perfect: 0, expected: expected_len, keep }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds raw score values in this tail's polarity.
    pub fn extend(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.n += 1;
            self.n_perfect += usize::from(v == self.polarity.perfect());
            self.best.push(self.polarity.key(v));
            if self.n <= self.expected && self.best.len() >= 2 * self.keep.max(1024) {
                self.best.select_nth_unstable_by(self.keep - 1, f64::total_cmp);
                self.best.truncate(self.keep);
            }
        }
    }

    pub fn threshold(&self, target: AccuracyTarget) -> CalibratedThreshold {
        debug_assert!(target.value() <= self.max_target);
        let mut sorted = self.best.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let n = self.n;
        let k = target.allowed(n);
        debug_assert!(sorted.len() >= (k + 1).min(n));
        // largest j < k whose value is not repeated at j + 1
        let pick = (0..k.min(sorted.len())).rev().find(|&j| j + 1 >= n || sorted[j + 1] != sorted[j]);
        let (value, unattainable, meeting) = match pick {
            Some(j) => (self.polarity.key(sorted[j]), false, j + 1),
            None => (self.polarity.perfect(), true, self.n_perfect),
        };
        let threshold = Threshold::new(value, self.polarity);
        CalibratedThreshold {
            threshold,
            target,
            achieved_fraction: meeting as f64 / n as f64,
            unattainable,
            n_scores: n,
        }
    }
}
