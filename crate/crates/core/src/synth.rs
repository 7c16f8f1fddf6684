//! Synthetic identities and samples with controlled genuine and impostor
//! statistics.
//!
//! An identity is `degrees_of_freedom` fair coin flips, each tiled over a
//! contiguous run of storage bits. Storage is angular-major, so a run covers
//! roughly one column and neighbouring columns are independent. A sample
//! flips bits of the identity code, rotates it and occludes a band of rows.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::{self, tag};
use crate::templates::irtb::{self, IrtbError};
use crate::templates::{full_plane, rotate_template, Geometry, Template};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid population parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Template { path: PathBuf, source: IrtbError },
    #[error("malformed population manifest: {0}")]
    Manifest(String),
}

/// Opaque subject identifier; cheap to clone.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubjectId(Arc<str>);

impl SubjectId {
    pub fn new(id: impl AsRef<str>) -> Self {
        SubjectId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Statistical model of the synthetic population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationParams {
    /// Independent bits per identity code.
    pub degrees_of_freedom: u32,
    /// Per-bit flip probability of each sample.
    pub genuine_flip_prob: f64,
    /// Samples are rotated uniformly within +-this many columns.
    pub max_rotation_offset: u16,
    /// Occluded fraction of rows, drawn uniformly from `[lo, hi]`.
    pub occlusion_fraction_range: (f64, f64),
    pub geometry: Geometry,
    pub seed: u64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        PopulationParams {
            degrees_of_freedom: 250,
            genuine_flip_prob: 0.065,
            max_rotation_offset: 7,
            occlusion_fraction_range: (0.0, 0.25),
            geometry: Geometry::default(),
            seed: 0,
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        let total = self.geometry.bit_len();
        if self.degrees_of_freedom == 0 || self.degrees_of_freedom as usize > total {
            return bad(format!("degrees_of_freedom {} outside 1..={total}", self.degrees_of_freedom));
        }
        if !(0.0..0.5).contains(&self.genuine_flip_prob) {
            return bad(format!("genuine_flip_prob {} outside [0, 0.5)", self.genuine_flip_prob));
        }
        let (lo, hi) = self.occlusion_fraction_range;
        if !(0.0..0.5).contains(&lo) || !(0.0..0.5).contains(&hi) || lo > hi {
            return bad(format!("occlusion range [{lo}, {hi}] outside [0, 0.5)"));
        }
        if self.max_rotation_offset >= self.geometry.cols() {
            return bad(format!(
                "max_rotation_offset {} must be below {} columns",
                self.max_rotation_offset,
                self.geometry.cols()
            ));
        }
        Ok(())
    }
}

/// How a subject was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Original,
    Rot180,
    FlipH,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Rot180 => "rot180",
            Origin::FlipH => "fliph",
        }
    }
}

impl FromStr for Origin {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Origin::Original),
            "rot180" => Ok(Origin::Rot180),
            "fliph" => Ok(Origin::FlipH),
            other => Err(SynthError::Manifest(format!("unknown origin `{other}`"))),
        }
    }
}

/// The noiseless code of one identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityMaster {
    pub subject_id: SubjectId,
    pub origin: Origin,
    geometry: Geometry,
    code: Vec<u64>,
}

impl IdentityMaster {
    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn code_words(&self) -> &[u64] {
        &self.code
    }

    /// The master code as a fully valid template.
    pub fn to_template(&self) -> Template {
        Template::from_parts_unchecked(self.geometry, self.code.clone(), full_plane(self.geometry))
    }
}

/// Storage index of the `t`-th bit along the tiling path. The path walks
/// wrapped diagonals `(col + row) mod cols`, each from row 0 down, so a
/// contiguous run of the path cuts across rows and columns alike, and a
/// column rotation maps every diagonal onto another whole diagonal.
pub fn tiling_position(g: Geometry, t: usize) -> usize {
    let (rows, cols, bpc) = (g.rows() as usize, g.cols() as usize, g.bits_per_cell() as usize);
    let cell = t / bpc;
    let (diagonal, row) = (cell / rows, cell % rows);
    let col = (diagonal + cols - row % cols) % cols;
    g.storage_index(row, col, t % bpc)
}

/// Draws a new identity: `degrees_of_freedom` fair bits, each repeated over
/// its own contiguous block of the tiling path.
pub fn gen_identity<R: Rng>(
    params: &PopulationParams,
    subject_id: SubjectId,
    rng: &mut R,
) -> Result<IdentityMaster, SynthError> {
    params.validate()?;
    let g = params.geometry;
    let len = g.bit_len();
    let dof = params.degrees_of_freedom as usize;
    let mut code = vec![0u64; len.div_ceil(64)];
    for block in 0..dof {
        if rng.random::<bool>() {
            for t in block * len / dof..(block + 1) * len / dof {
                let i = tiling_position(g, t);
                code[i / 64] |= 1 << (i % 64);
            }
        }
    }
    Ok(IdentityMaster { subject_id, origin: Origin::Original, geometry: g, code })
}

/// One noisy, rotated, occluded sample of `master`.
pub fn gen_sample<R: Rng>(master: &IdentityMaster, params: &PopulationParams, rng: &mut R) -> Template {
    let g = master.geometry;
    let len = g.bit_len();
    let mut code = master.code.clone();
    let p = params.genuine_flip_prob;
    if p > 0.0 {
        for i in 0..len {
            if rng.random::<f64>() < p {
                code[i / 64] ^= 1 << (i % 64);
            }
        }
    }
    let mut sample = Template::from_parts_unchecked(g, code, full_plane(g));

    let max = params.max_rotation_offset as i32;
    if max > 0 {
        let shift = rng.random_range(-max..=max);
        sample = rotate_template(&sample, shift).expect("offset validated against geometry");
    }

    let (lo, hi) = params.occlusion_fraction_range;
    let fraction = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let rows = g.rows() as usize;
    let band = (fraction * rows as f64).round() as usize;
    if band > 0 {
        let start = rng.random_range(0..=rows - band);
        sample.occlude_rows(start, band).expect("occlusion below half the rows");
    }
    sample
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentKind {
    Rotate180,
    FlipHorizontal,
}

impl AugmentKind {
    pub fn origin(self) -> Origin {
        match self {
            AugmentKind::Rotate180 => Origin::Rot180,
            AugmentKind::FlipHorizontal => Origin::FlipH,
        }
    }
}

/// A new identity whose code is a spatial transform of `master`: a 180
/// degree rotation reverses rows and columns, a horizontal flip reverses
/// columns. Bits inside a cell keep their order.
pub fn augment_identity(master: &IdentityMaster, kind: AugmentKind) -> IdentityMaster {
    let g = master.geometry;
    let (rows, cols, bpc) = (g.rows() as usize, g.cols() as usize, g.bits_per_cell() as usize);
    let mut code = vec![0u64; master.code.len()];
    for row in 0..rows {
        for col in 0..cols {
            let (src_row, src_col) = match kind {
                AugmentKind::Rotate180 => (rows - 1 - row, cols - 1 - col),
                AugmentKind::FlipHorizontal => (row, cols - 1 - col),
            };
            for bit in 0..bpc {
                let src = g.storage_index(src_row, src_col, bit);
                if (master.code[src / 64] >> (src % 64)) & 1 == 1 {
                    let dst = g.storage_index(row, col, bit);
                    code[dst / 64] |= 1 << (dst % 64);
                }
            }
        }
    }
    IdentityMaster {
        subject_id: SubjectId::new(format!("{}+{}", master.subject_id, kind.origin().as_str())),
        origin: kind.origin(),
        geometry: g,
        code,
    }
}

/// A subject of the population and its samples; sample 0 is the enrollment
/// reference.
#[derive(Clone, Debug)]
pub struct Subject {
    pub id: SubjectId,
    pub origin: Origin,
    pub samples: Vec<Arc<Template>>,
}

#[derive(Clone, Debug)]
pub struct Population {
    pub geometry: Geometry,
    pub subjects: Vec<Subject>,
}

impl Population {
    pub fn sample_count(&self) -> usize {
        self.subjects.iter().map(|s| s.samples.len()).sum()
    }
}

/// Size of a generated population: each base identity contributes itself
/// plus its 180-degree and flipped variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PopulationSize {
    pub base_subjects: usize,
    pub samples_per_subject: usize,
}

/// Generates the full population. Subject `i` draws from its own stream, so
/// the result is identical for any thread count.
pub fn generate_population(params: &PopulationParams, size: PopulationSize) -> Result<Population, SynthError> {
    params.validate()?;
    if size.samples_per_subject == 0 {
        return Err(SynthError::InvalidParams("samples_per_subject must be at least 1".into()));
    }
    let per_base: Vec<Vec<Subject>> = (0..size.base_subjects)
        .into_par_iter()
        .map(|base| {
            let mut rng = rng::stream(params.seed, &[tag::IDENTITY, base as u64]);
            let master = gen_identity(params, SubjectId::new(format!("s{base:05}")), &mut rng)?;
            let identities = [
                augment_identity(&master, AugmentKind::Rotate180),
                augment_identity(&master, AugmentKind::FlipHorizontal),
            ];
            let all = std::iter::once(master).chain(identities);
            Ok(all
                .enumerate()
                .map(|(k, identity)| {
                    let mut rng = rng::stream(params.seed, &[tag::SAMPLES, base as u64, k as u64]);
                    let samples = (0..size.samples_per_subject)
                        .map(|_| Arc::new(gen_sample(&identity, params, &mut rng)))
                        .collect();
                    Subject { id: identity.subject_id, origin: identity.origin, samples }
                })
                .collect())
        })
        .collect::<Result<_, SynthError>>()?;
    Ok(Population { geometry: params.geometry, subjects: per_base.into_iter().flatten().collect() })
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub(crate) fn sample_path(subject: &SubjectId, index: usize) -> PathBuf {
    Path::new("samples").join(subject.as_str()).join(format!("{index}.irtb"))
}

/// Writes every sample as an IRTB file under `dir/samples/` plus
/// `dir/manifest.csv` (`subject_id,origin,path`, paths relative to `dir`).
pub fn write_population(dir: &Path, population: &Population) -> Result<PathBuf, SynthError> {
    fs::create_dir_all(dir)?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest)?;
    w.write_record(["subject_id", "origin", "path"])?;
    for subject in &population.subjects {
        fs::create_dir_all(dir.join("samples").join(subject.id.as_str()))?;
        for (k, sample) in subject.samples.iter().enumerate() {
            let rel = sample_path(&subject.id, k);
            irtb::write_file(&dir.join(&rel), sample)
                .map_err(|source| SynthError::Template { path: dir.join(&rel), source })?;
            w.write_record([subject.id.as_str(), subject.origin.as_str(), &rel.to_string_lossy()])?;
        }
    }
    w.flush()?;
    Ok(manifest)
}

/// Loads a population from its manifest. Rows of one subject must be
/// contiguous; their order is the sample order.
pub fn read_population(manifest: &Path) -> Result<Population, SynthError> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut r = csv::Reader::from_path(manifest)?;
    let mut subjects: Vec<Subject> = Vec::new();
    let mut geometry = None;
    for record in r.records() {
        let record = record?;
        let [id, origin, path] = [0, 1, 2].map(|i| record.get(i).unwrap_or_default());
        let full = base.join(path);
        let t = irtb::read_file(&full).map_err(|source| SynthError::Template { path: full.clone(), source })?;
        match geometry {
            None => geometry = Some(t.geometry()),
            Some(g) if g != t.geometry() => {
                return Err(SynthError::Manifest(format!("{path}: geometry {} differs from {g}", t.geometry())))
            }
            Some(_) => {}
        }
        match subjects.last_mut() {
            Some(s) if s.id.as_str() == id => s.samples.push(Arc::new(t)),
            _ => {
                if subjects.iter().any(|s| s.id.as_str() == id) {
                    return Err(SynthError::Manifest(format!("rows of subject {id} are not contiguous")));
                }
                subjects.push(Subject { id: SubjectId::new(id), origin: origin.parse()?, samples: vec![Arc::new(t)] });
            }
        }
    }
    let geometry = geometry.ok_or_else(|| SynthError::Manifest("no samples".into()))?;
    Ok(Population { geometry, subjects })
}
