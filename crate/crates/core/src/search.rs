//! Exhaustive 1:N and early-terminating 1:First identification search.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::scenario::{Gallery, Probe};
use crate::synth::SubjectId;
use crate::templates::{HammingCounts, RotatedProbe, RotationPolicy, Score, ShiftRange, TemplateError, Threshold};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("cannot search an empty gallery")]
    EmptyGallery,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    OneToN,
    OneToFirst,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::OneToN, Strategy::OneToFirst];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::OneToN => "one_to_n",
            Strategy::OneToFirst => "one_to_first",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one_to_n" | "1:N" => Ok(Strategy::OneToN),
            "one_to_first" | "1:First" => Ok(Strategy::OneToFirst),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Which scan produced the decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// First pass of a two-stage policy.
    Narrow,
    /// Wide rescan of a two-stage policy (or 1:N under a two-stage policy).
    Wide,
    SingleStage,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Narrow => "narrow",
            Stage::Wide => "wide",
            Stage::SingleStage => "single",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "narrow" => Ok(Stage::Narrow),
            "wide" => Ok(Stage::Wide),
            "single" => Ok(Stage::SingleStage),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Match { identified: SubjectId, score: Score, gallery_index: usize },
    NonMatch,
}

impl Decision {
    pub fn is_match(&self) -> bool {
        matches!(self, Decision::Match { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transaction {
    pub probe_subject: SubjectId,
    pub decision: Decision,
    pub pairs_examined: u64,
    pub rotations_evaluated: u64,
    pub stage_reached: Stage,
}

/// Total rotation-shift evaluations behind a transaction.
pub fn count_rotations(tx: &Transaction) -> u64 {
    tx.rotations_evaluated
}

/// Which of a policy's ranges a scan pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Pass {
    Narrow,
    Wide,
}

impl Pass {
    pub(crate) fn range(self, policy: &RotationPolicy) -> ShiftRange {
        match self {
            Pass::Narrow => policy.narrow,
            Pass::Wide => policy.wide,
        }
    }
}

/// Outcome of a scan before subject ids are attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ScanResult {
    pub hit: Option<(usize, HammingCounts)>,
    pub pairs_examined: u64,
    pub rotations_evaluated: u64,
    pub stage: Stage,
}

fn admits(threshold: &Threshold, counts: HammingCounts) -> bool {
    threshold.admits(counts.score(threshold.polarity).value())
}

/// 1:N over `n` entries; `score(i, pass)` gives the best counts of entry
/// `i`, `None` when the pair never overlaps.
pub(crate) fn scan_one_to_n<F>(n: usize, policy: &RotationPolicy, threshold: &Threshold, score: F) -> ScanResult
where
    F: Fn(usize, Pass) -> Option<HammingCounts>,
{
    let best = best_entry(n, policy, score);
    ScanResult { hit: best.hit.filter(|&(_, c)| admits(threshold, c)), ..best }
}

/// Full 1:N scan with the best entry (lowest index on ties) as `hit`,
/// whatever its score.
fn best_entry<F>(n: usize, policy: &RotationPolicy, score: F) -> ScanResult
where
    F: Fn(usize, Pass) -> Option<HammingCounts>,
{
    let (pass, stage) = if policy.two_stage { (Pass::Wide, Stage::Wide) } else { (Pass::Narrow, Stage::SingleStage) };
    let mut best: Option<(usize, HammingCounts)> = None;
    for i in 0..n {
        if let Some(c) = score(i, pass) {
            if best.is_none_or(|(_, b)| c.is_lower_than(&b)) {
                best = Some((i, c));
            }
        }
    }
    ScanResult {
        hit: best,
        pairs_examined: n as u64,
        rotations_evaluated: n as u64 * pass.range(policy).len() as u64,
        stage,
    }
}

/// 1:First over `n` entries in index order, with an optional wide rescan.
pub(crate) fn scan_one_to_first<F>(n: usize, policy: &RotationPolicy, threshold: &Threshold, score: F) -> ScanResult
where
    F: Fn(usize, Pass) -> Option<HammingCounts>,
{
    let passes: &[(Pass, Stage)] = if policy.two_stage {
        &[(Pass::Narrow, Stage::Narrow), (Pass::Wide, Stage::Wide)]
    } else {
        &[(Pass::Narrow, Stage::SingleStage)]
    };
    let mut pairs = 0u64;
    let mut rotations = 0u64;
    let mut stage = passes[0].1;
    for &(pass, s) in passes {
        stage = s;
        let per_pair = pass.range(policy).len() as u64;
        for i in 0..n {
            pairs += 1;
            rotations += per_pair;
            if let Some(c) = score(i, pass) {
                if admits(threshold, c) {
                    return ScanResult { hit: Some((i, c)), pairs_examined: pairs, rotations_evaluated: rotations, stage };
                }
            }
        }
    }
    ScanResult { hit: None, pairs_examined: pairs, rotations_evaluated: rotations, stage }
}

/// [`scan_one_to_n`] for several thresholds at once: the best entry does not
/// depend on the threshold.
pub(crate) fn scan_one_to_n_multi<F>(
    n: usize,
    policy: &RotationPolicy,
    thresholds: &[Threshold],
    score: F,
) -> Vec<ScanResult>
where
    F: Fn(usize, Pass) -> Option<HammingCounts>,
{
    let all = best_entry(n, policy, score);
    thresholds
        .iter()
        .map(|t| ScanResult { hit: all.hit.filter(|&(_, c)| admits(t, c)), ..all })
        .collect()
}

/// [`scan_one_to_first`] for several thresholds in one pass. A score that
/// meets a threshold meets every more lenient one, so the thresholds are
/// satisfied in order of decreasing leniency.
pub(crate) fn scan_one_to_first_multi<F>(
    n: usize,
    policy: &RotationPolicy,
    thresholds: &[Threshold],
    score: F,
) -> Vec<ScanResult>
where
    F: Fn(usize, Pass) -> Option<HammingCounts>,
{
    let mut order: Vec<usize> = (0..thresholds.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |t: &Threshold| t.polarity.key(t.value);
        key(&thresholds[b]).total_cmp(&key(&thresholds[a]))
    });
    let passes: &[(Pass, Stage)] = if policy.two_stage {
        &[(Pass::Narrow, Stage::Narrow), (Pass::Wide, Stage::Wide)]
    } else {
        &[(Pass::Narrow, Stage::SingleStage)]
    };
    let mut out = vec![None; thresholds.len()];
    let mut done = 0;
    let mut pairs = 0u64;
    let mut rotations = 0u64;
    let mut stage = passes[0].1;
    for &(pass, s) in passes {
        stage = s;
        let per_pair = pass.range(policy).len() as u64;
        for i in 0..n {
            if done == order.len() {
                break;
            }
            pairs += 1;
            rotations += per_pair;
            if let Some(c) = score(i, pass) {
                while done < order.len() && admits(&thresholds[order[done]], c) {
                    out[order[done]] =
                        Some(ScanResult { hit: Some((i, c)), pairs_examined: pairs, rotations_evaluated: rotations, stage });
                    done += 1;
                }
            }
        }
    }
    out.into_iter()
        .map(|r| r.unwrap_or(ScanResult { hit: None, pairs_examined: pairs, rotations_evaluated: rotations, stage }))
        .collect()
}

impl ScanResult {
    pub(crate) fn into_transaction<'a>(
        self,
        probe_subject: &SubjectId,
        threshold: &Threshold,
        subject_at: impl Fn(usize) -> &'a SubjectId,
    ) -> Transaction {
        let decision = match self.hit {
            Some((i, c)) => Decision::Match {
                identified: subject_at(i).clone(),
                score: c.score(threshold.polarity),
                gallery_index: i,
            },
            None => Decision::NonMatch,
        };
        Transaction {
            probe_subject: probe_subject.clone(),
            decision,
            pairs_examined: self.pairs_examined,
            rotations_evaluated: self.rotations_evaluated,
            stage_reached: self.stage,
        }
    }
}

type Scan = fn(usize, &RotationPolicy, &Threshold, &dyn Fn(usize, Pass) -> Option<HammingCounts>) -> ScanResult;

fn live_search(probe: &Probe, gallery: &Gallery, threshold: &Threshold, policy: &RotationPolicy, scan: Scan) -> Result<Transaction, SearchError> {
    if gallery.is_empty() {
        return Err(SearchError::EmptyGallery);
    }
    let g = probe.template.geometry();
    if let Some(e) = gallery.entries().iter().find(|e| e.template.geometry() != g) {
        return Err(TemplateError::Incompatible(g, e.template.geometry()).into());
    }
    let rotated = RotatedProbe::new(&probe.template, policy.effective_range())?;
    let entries = gallery.entries();
    let score = |i: usize, pass: Pass| rotated.best_against(&entries[i].template, pass.range(policy)).map(|m| m.counts);
    let result = scan(entries.len(), policy, threshold, &score);
    Ok(result.into_transaction(&probe.subject, threshold, |i| &entries[i].subject))
}

/// Exhaustive search: the best-scoring entry wins if it meets the threshold.
/// Two-stage policies are scanned once over the wide range.
pub fn search_one_to_n(
    probe: &Probe,
    gallery: &Gallery,
    threshold: &Threshold,
    policy: &RotationPolicy,
) -> Result<Transaction, SearchError> {
    live_search(probe, gallery, threshold, policy, |n, p, t, f| scan_one_to_n(n, p, t, f))
}

/// In-order search that stops at the first entry meeting the threshold.
pub fn search_one_to_first(
    probe: &Probe,
    gallery: &Gallery,
    threshold: &Threshold,
    policy: &RotationPolicy,
) -> Result<Transaction, SearchError> {
    live_search(probe, gallery, threshold, policy, |n, p, t, f| scan_one_to_first(n, p, t, f))
}

pub fn search(
    strategy: Strategy,
    probe: &Probe,
    gallery: &Gallery,
    threshold: &Threshold,
    policy: &RotationPolicy,
) -> Result<Transaction, SearchError> {
    match strategy {
        Strategy::OneToN => search_one_to_n(probe, gallery, threshold, policy),
        Strategy::OneToFirst => search_one_to_first(probe, gallery, threshold, policy),
    }
}
