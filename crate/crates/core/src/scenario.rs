//! Galleries, closed and open probe sets, and gallery permutations.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::synth::{Population, SubjectId};
use crate::templates::Template;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("gallery must hold at least one subject")]
    EmptyGallery,
    #[error("pool exhausted: {what} needs {needed}, only {available} available")]
    PoolExhausted { what: &'static str, needed: usize, available: usize },
    #[error("subject {0} appears twice in the gallery")]
    DuplicateSubject(SubjectId),
    #[error("gallery subject {0} is not in the pool")]
    UnknownSubject(SubjectId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SetType {
    Closed,
    Open,
}

impl SetType {
    pub fn as_str(self) -> &'static str {
        match self {
            SetType::Closed => "closed",
            SetType::Open => "open",
        }
    }
}

impl fmt::Display for SetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closed" => Ok(SetType::Closed),
            "open" => Ok(SetType::Open),
            other => Err(format!("unknown set type `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GalleryEntry {
    pub subject: SubjectId,
    pub template: Arc<Template>,
}

/// Ordered enrollment with one reference per subject. Order matters to
/// 1:First search and is part of equality.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
}

impl Gallery {
    pub fn new(entries: Vec<GalleryEntry>) -> Result<Self, ScenarioError> {
        if entries.is_empty() {
            return Err(ScenarioError::EmptyGallery);
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.subject) {
                return Err(ScenarioError::DuplicateSubject(e.subject.clone()));
            }
        }
        Ok(Gallery { entries })
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, subject: &SubjectId) -> bool {
        self.entries.iter().any(|e| &e.subject == subject)
    }

    /// Same entries reordered so that position `i` holds `self[order[i]]`.
    pub fn reordered(&self, order: &[usize]) -> Gallery {
        Gallery { entries: order.iter().map(|&i| self.entries[i].clone()).collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub subject: SubjectId,
    pub template: Arc<Template>,
    pub enrolled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub set_type: SetType,
    pub probes: Vec<Probe>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn unenrolled(&self) -> usize {
        self.probes.iter().filter(|p| !p.enrolled).count()
    }
}

/// Draws `size` distinct subjects uniformly without replacement; each is
/// enrolled with its first sample, in draw order.
pub fn build_gallery<R: Rng>(pool: &Population, size: usize, rng: &mut R) -> Result<Gallery, ScenarioError> {
    if size == 0 {
        return Err(ScenarioError::EmptyGallery);
    }
    let eligible: Vec<usize> = (0..pool.subjects.len()).filter(|&i| pool.subjects[i].samples.len() >= 2).collect();
    if eligible.len() < size {
        return Err(ScenarioError::PoolExhausted {
            what: "gallery (subjects with >= 2 samples)",
            needed: size,
            available: eligible.len(),
        });
    }
    let entries = index::sample(rng, eligible.len(), size)
        .into_iter()
        .map(|k| {
            let s = &pool.subjects[eligible[k]];
            GalleryEntry { subject: s.id.clone(), template: Arc::clone(&s.samples[0]) }
        })
        .collect();
    Gallery::new(entries)
}

fn pool_lookup(pool: &Population) -> HashMap<&SubjectId, usize> {
    pool.subjects.iter().enumerate().map(|(i, s)| (&s.id, i)).collect()
}

/// Every non-enrollment sample of every enrolled subject, in gallery order.
fn enrolled_candidates(pool: &Population, gallery: &Gallery) -> Result<Vec<Probe>, ScenarioError> {
    let lookup = pool_lookup(pool);
    let mut out = Vec::new();
    for e in gallery.entries() {
        let &i = lookup.get(&e.subject).ok_or_else(|| ScenarioError::UnknownSubject(e.subject.clone()))?;
        out.extend(pool.subjects[i].samples[1..].iter().map(|t| Probe {
            subject: e.subject.clone(),
            template: Arc::clone(t),
            enrolled: true,
        }));
    }
    Ok(out)
}

/// Uniform subset of `k` items, kept in their original order.
fn subsample<R: Rng, T: Clone>(items: &[T], k: usize, rng: &mut R) -> Vec<T> {
    let mut picked = index::sample(rng, items.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Closed probe set: all spare samples of enrolled subjects, uniformly
/// subsampled down to `cap`.
pub fn build_closed_probeset<R: Rng>(
    pool: &Population,
    gallery: &Gallery,
    cap: usize,
    rng: &mut R,
) -> Result<ProbeSet, ScenarioError> {
    let candidates = enrolled_candidates(pool, gallery)?;
    let probes = if candidates.len() > cap { subsample(&candidates, cap, rng) } else { candidates };
    Ok(ProbeSet { set_type: SetType::Closed, probes })
}

/// Open probe set: `round(1.5 N)` probes of enrolled subjects plus
/// `round(0.75 N)` samples of subjects outside the gallery.
pub fn build_open_probeset<R: Rng>(pool: &Population, gallery: &Gallery, rng: &mut R) -> Result<ProbeSet, ScenarioError> {
    let n = gallery.len() as f64;
    let n_enrolled = (1.5 * n).round() as usize;
    let n_unenrolled = (0.75 * n).round() as usize;

    let candidates = enrolled_candidates(pool, gallery)?;
    if candidates.len() < n_enrolled {
        return Err(ScenarioError::PoolExhausted {
            what: "open probe set (enrolled samples)",
            needed: n_enrolled,
            available: candidates.len(),
        });
    }
    let enrolled: HashSet<&SubjectId> = gallery.entries().iter().map(|e| &e.subject).collect();
    let outsiders: Vec<Probe> = pool
        .subjects
        .iter()
        .filter(|s| !enrolled.contains(&s.id))
        .flat_map(|s| {
            s.samples.iter().map(|t| Probe { subject: s.id.clone(), template: Arc::clone(t), enrolled: false })
        })
        .collect();
    if outsiders.len() < n_unenrolled {
        return Err(ScenarioError::PoolExhausted {
            what: "open probe set (unenrolled samples)",
            needed: n_unenrolled,
            available: outsiders.len(),
        });
    }
    let mut probes = subsample(&candidates, n_enrolled, rng);
    probes.extend(subsample(&outsiders, n_unenrolled, rng));
    Ok(ProbeSet { set_type: SetType::Open, probes })
}

/// A uniformly random order of `len` gallery positions.
pub fn random_order<R: Rng>(len: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

/// The same entries in a uniformly random new order.
pub fn permute_gallery<R: Rng>(g: &Gallery, rng: &mut R) -> Gallery {
    g.reordered(&random_order(g.len(), rng))
}
