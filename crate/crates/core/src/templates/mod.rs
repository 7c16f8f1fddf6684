//! Binary iris templates, masked fractional Hamming distance and rotation
//! alignment.
//!
//! Bits are stored angular-major: all bits of column 0 (every row, every
//! bit of each cell), then column 1, and so on. Rotating a template by whole
//! columns is then a circular shift of each packed plane.

mod bits;
pub mod irtb;
mod score;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use score::{meets_threshold, Polarity, Score, Threshold, SIMILARITY_SCALE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("invalid geometry {rows}x{cols}x{bits_per_cell}: every dimension must be at least 1")]
    InvalidGeometry { rows: u16, cols: u16, bits_per_cell: u8 },
    #[error("plane holds {got} words, geometry needs {expected}")]
    PlaneLength { expected: usize, got: usize },
    #[error("plane has bits set past the end of the geometry")]
    DirtyPadding,
    #[error("template mask has no valid bits")]
    EmptyMask,
    #[error("shift {shift} is out of range for a template with {cols} columns")]
    InvalidShift { shift: i32, cols: u16 },
    #[error("templates have different geometries ({0} vs {1})")]
    Incompatible(Geometry, Geometry),
    #[error("templates share no jointly valid bits")]
    NoOverlap,
    #[error("empty shift range [{lo}, {hi}]")]
    EmptyRange { lo: i32, hi: i32 },
    #[error("scores or thresholds of different polarity cannot be compared")]
    PolarityMismatch,
    #[error("score {value} is outside the {polarity} scale")]
    ScoreOutOfRange { value: f64, polarity: Polarity },
    #[error("invalid rotation policy: {0}")]
    InvalidPolicy(String),
}

/// Grid layout of a template: radial bands x angular positions x bits per
/// cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Geometry {
    rows: u16,
    cols: u16,
    bits_per_cell: u8,
}

impl Geometry {
    pub fn new(rows: u16, cols: u16, bits_per_cell: u8) -> Result<Self, TemplateError> {
        if rows == 0 || cols == 0 || bits_per_cell == 0 {
            return Err(TemplateError::InvalidGeometry { rows, cols, bits_per_cell });
        }
        Ok(Geometry { rows, cols, bits_per_cell })
    }

    pub fn rows(&self) -> u16 {
        self.rows
    }

    pub fn cols(&self) -> u16 {
        self.cols
    }

    pub fn bits_per_cell(&self) -> u8 {
        self.bits_per_cell
    }

    /// Total bits per plane.
    pub fn bit_len(&self) -> usize {
        self.rows as usize * self.cols as usize * self.bits_per_cell as usize
    }

    /// Bits in one angular column.
    pub fn column_bits(&self) -> usize {
        self.rows as usize * self.bits_per_cell as usize
    }

    pub(crate) fn words(&self) -> usize {
        bits::words_for(self.bit_len())
    }

    /// Position of a cell bit in the packed (angular-major) planes.
    pub fn storage_index(&self, row: usize, col: usize, bit: usize) -> usize {
        (col * self.rows as usize + row) * self.bits_per_cell as usize + bit
    }

    /// Position of a cell bit in row-major order, as used by the IRTB format.
    pub fn row_major_index(&self, row: usize, col: usize, bit: usize) -> usize {
        (row * self.cols as usize + col) * self.bits_per_cell as usize + bit
    }
}

impl Default for Geometry {
    /// 20 x 240 x 2 = 9,600 bits.
    fn default() -> Self {
        Geometry { rows: 20, cols: 240, bits_per_cell: 2 }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.bits_per_cell)
    }
}

/// A packed binary code with its validity mask (1 = bit usable).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Template {
    geometry: Geometry,
    code: Vec<u64>,
    mask: Vec<u64>,
}

impl Template {
    /// Builds a template from packed angular-major planes.
    pub fn new(geometry: Geometry, code: Vec<u64>, mask: Vec<u64>) -> Result<Self, TemplateError> {
        let expected = geometry.words();
        for plane in [&code, &mask] {
            if plane.len() != expected {
                return Err(TemplateError::PlaneLength { expected, got: plane.len() });
            }
            if !bits::padding_clear(plane, geometry.bit_len()) {
                return Err(TemplateError::DirtyPadding);
            }
        }
        if bits::popcount(&mask) == 0 {
            return Err(TemplateError::EmptyMask);
        }
        Ok(Template { geometry, code, mask })
    }

    /// Builds a template from unpacked bits in storage order.
    pub fn from_bits(geometry: Geometry, code: &[bool], mask: &[bool]) -> Result<Self, TemplateError> {
        let expected = geometry.bit_len();
        for plane in [code, mask] {
            if plane.len() != expected {
                return Err(TemplateError::PlaneLength {
                    expected: geometry.words(),
                    got: bits::words_for(plane.len()),
                });
            }
        }
        Template::new(geometry, bits::from_bools(code), bits::from_bools(mask))
    }

    /// A template whose every bit is valid.
    pub fn with_full_mask(geometry: Geometry, code: Vec<u64>) -> Result<Self, TemplateError> {
        let mask = full_plane(geometry);
        Template::new(geometry, code, mask)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn code_words(&self) -> &[u64] {
        &self.code
    }

    pub fn mask_words(&self) -> &[u64] {
        &self.mask
    }

    pub fn code_bit(&self, row: usize, col: usize, bit: usize) -> bool {
        bits::get(&self.code, self.geometry.storage_index(row, col, bit))
    }

    pub fn mask_bit(&self, row: usize, col: usize, bit: usize) -> bool {
        bits::get(&self.mask, self.geometry.storage_index(row, col, bit))
    }

    /// Code bits in storage order.
    pub fn code_bits(&self) -> Vec<bool> {
        (0..self.geometry.bit_len()).map(|i| bits::get(&self.code, i)).collect()
    }

    /// Mask bits in storage order.
    pub fn mask_bits(&self) -> Vec<bool> {
        (0..self.geometry.bit_len()).map(|i| bits::get(&self.mask, i)).collect()
    }

    pub fn valid_bits(&self) -> u32 {
        bits::popcount(&self.mask)
    }

    /// Clears the mask over full rows `start..start + count`. Fails if that
    /// would leave no valid bit.
    pub fn occlude_rows(&mut self, start: usize, count: usize) -> Result<(), TemplateError> {
        let g = self.geometry;
        let mut mask = self.mask.clone();
        for row in start..(start + count).min(g.rows as usize) {
            for col in 0..g.cols as usize {
                for bit in 0..g.bits_per_cell as usize {
                    bits::set(&mut mask, g.storage_index(row, col, bit), false);
                }
            }
        }
        if bits::popcount(&mask) == 0 {
            return Err(TemplateError::EmptyMask);
        }
        self.mask = mask;
        Ok(())
    }

    pub(crate) fn from_parts_unchecked(geometry: Geometry, code: Vec<u64>, mask: Vec<u64>) -> Self {
        Template { geometry, code, mask }
    }
}

pub(crate) fn full_plane(geometry: Geometry) -> Vec<u64> {
    let len = geometry.bit_len();
    let mut plane = vec![u64::MAX; geometry.words()];
    let tail = len % 64;
    if tail != 0 {
        *plane.last_mut().expect("geometry has at least one bit") = (1u64 << tail) - 1;
    }
    plane
}

/// Circularly shifts code and mask along the angular axis: column `c` moves
/// to column `c + shift (mod cols)`.
pub fn rotate_template(t: &Template, shift: i32) -> Result<Template, TemplateError> {
    let cols = t.geometry.cols;
    if shift.unsigned_abs() >= cols as u32 {
        return Err(TemplateError::InvalidShift { shift, cols });
    }
    let len = t.geometry.bit_len();
    let columns = shift.rem_euclid(cols as i32) as usize;
    let k = columns * t.geometry.column_bits();
    Ok(Template {
        geometry: t.geometry,
        code: bits::rotate(&t.code, len, k),
        mask: bits::rotate(&t.mask, len, k),
    })
}

/// Raw counts behind a fractional Hamming distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HammingCounts {
    /// Jointly valid bits that disagree.
    pub disagree: u32,
    /// Jointly valid bits.
    pub valid: u32,
}

impl HammingCounts {
    pub fn fraction(&self) -> f64 {
        self.disagree as f64 / self.valid as f64
    }

    pub fn score(&self, polarity: Polarity) -> Score {
        polarity.express(self.disagree, self.valid)
    }

    /// Exact comparison of the two fractions without rounding.
    #[inline]
    pub fn is_lower_than(&self, other: &HammingCounts) -> bool {
        (self.disagree as u64) * (other.valid as u64) < (other.disagree as u64) * (self.valid as u64)
    }
}

fn check_compatible(a: &Template, b: &Template) -> Result<(), TemplateError> {
    if a.geometry != b.geometry {
        return Err(TemplateError::Incompatible(a.geometry, b.geometry));
    }
    Ok(())
}

/// Disagreeing and jointly valid bit counts of two templates.
pub fn hamming_counts(a: &Template, b: &Template) -> Result<HammingCounts, TemplateError> {
    check_compatible(a, b)?;
    let (disagree, valid) = bits::masked_counts(&a.code, &a.mask, &b.code, &b.mask);
    if valid == 0 {
        return Err(TemplateError::NoOverlap);
    }
    Ok(HammingCounts { disagree, valid })
}

/// Fraction of jointly valid bits that disagree.
pub fn fractional_hamming(a: &Template, b: &Template) -> Result<Score, TemplateError> {
    Ok(hamming_counts(a, b)?.score(Polarity::Dissimilarity))
}

/// Inclusive interval of column shifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ShiftRange {
    lo: i32,
    hi: i32,
}

impl ShiftRange {
    pub fn new(lo: i32, hi: i32) -> Result<Self, TemplateError> {
        if lo > hi {
            return Err(TemplateError::EmptyRange { lo, hi });
        }
        Ok(ShiftRange { lo, hi })
    }

    /// `[-k, +k]`.
    pub fn symmetric(k: u16) -> Self {
        ShiftRange { lo: -(k as i32), hi: k as i32 }
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    pub fn hi(&self) -> i32 {
        self.hi
    }

    pub fn contains(&self, shift: i32) -> bool {
        (self.lo..=self.hi).contains(&shift)
    }

    pub fn covers(&self, other: &ShiftRange) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Number of shifts evaluated per pair.
    pub fn len(&self) -> u32 {
        (self.hi - self.lo + 1) as u32
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Shifts in tie-break order: smallest magnitude first, negative before
    /// positive.
    pub fn shifts(&self) -> Vec<i32> {
        let mut shifts: Vec<i32> = (self.lo..=self.hi).collect();
        shifts.sort_by_key(|s| (s.unsigned_abs(), *s));
        shifts
    }

    fn check_for(&self, geometry: Geometry) -> Result<(), TemplateError> {
        let cols = geometry.cols;
        for shift in [self.lo, self.hi] {
            if shift.unsigned_abs() >= cols as u32 {
                return Err(TemplateError::InvalidShift { shift, cols });
            }
        }
        Ok(())
    }
}

impl fmt::Display for ShiftRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Best alignment of a pair over a shift range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RotationMatch {
    pub counts: HammingCounts,
    /// Shift applied to the second template.
    pub shift: i32,
}

impl RotationMatch {
    pub fn score(&self, polarity: Polarity) -> Score {
        self.counts.score(polarity)
    }
}

/// Minimum fractional Hamming distance of `a` against `b` rotated by every
/// shift in `range`. Ties go to the smallest |shift|, then to the negative
/// shift.
pub fn best_of_rotations(a: &Template, b: &Template, range: ShiftRange) -> Result<RotationMatch, TemplateError> {
    check_compatible(a, b)?;
    range.check_for(a.geometry)?;
    let mut best: Option<RotationMatch> = None;
    for shift in range.shifts() {
        let rotated = rotate_template(b, shift)?;
        let (disagree, valid) = bits::masked_counts(&a.code, &a.mask, &rotated.code, &rotated.mask);
        if valid == 0 {
            continue;
        }
        let counts = HammingCounts { disagree, valid };
        if best.is_none_or(|cur| counts.is_lower_than(&cur.counts)) {
            best = Some(RotationMatch { counts, shift });
        }
    }
    best.ok_or(TemplateError::NoOverlap)
}

/// A probe with its rotations precomputed over a shift range, for scoring
/// against many references.
///
/// Rotating the probe by `-s` and comparing against an unrotated reference
/// gives exactly the counts of comparing the probe against the reference
/// rotated by `s`, so results agree with [`best_of_rotations`].
#[derive(Clone, Debug)]
pub struct RotatedProbe {
    geometry: Geometry,
    range: ShiftRange,
    /// (shift, code, mask) in tie-break order.
    rotations: Vec<(i32, Vec<u64>, Vec<u64>)>,
}

impl RotatedProbe {
    pub fn new(probe: &Template, range: ShiftRange) -> Result<Self, TemplateError> {
        range.check_for(probe.geometry)?;
        let rotations = range
            .shifts()
            .into_iter()
            .map(|shift| {
                let r = rotate_template(probe, -shift)?;
                Ok((shift, r.code, r.mask))
            })
            .collect::<Result<_, TemplateError>>()?;
        Ok(RotatedProbe { geometry: probe.geometry, range, rotations })
    }

    pub fn range(&self) -> ShiftRange {
        self.range
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Per-shift counts against `reference`, in tie-break order. `None`
    /// marks shifts with no jointly valid bits.
    pub fn counts_against<'a>(
        &'a self,
        reference: &'a Template,
    ) -> impl Iterator<Item = (i32, Option<HammingCounts>)> + 'a {
        self.rotations.iter().map(move |(shift, code, mask)| {
            let (disagree, valid) = bits::masked_counts(code, mask, &reference.code, &reference.mask);
            (*shift, (valid > 0).then_some(HammingCounts { disagree, valid }))
        })
    }

    /// Best alignment against `reference` over `range`, which must lie within
    /// the precomputed range. `None` when no shift overlaps.
    pub fn best_against(&self, reference: &Template, range: ShiftRange) -> Option<RotationMatch> {
        debug_assert!(self.range.covers(&range));
        let mut best: Option<RotationMatch> = None;
        for (shift, code, mask) in &self.rotations {
            if !range.contains(*shift) {
                continue;
            }
            let (disagree, valid) = bits::masked_counts(code, mask, &reference.code, &reference.mask);
            if valid == 0 {
                continue;
            }
            let counts = HammingCounts { disagree, valid };
            if best.is_none_or(|cur| counts.is_lower_than(&cur.counts)) {
                best = Some(RotationMatch { counts, shift: *shift });
            }
        }
        best
    }

    /// Best alignment for each of `ranges` in one pass over the shifts.
    pub fn best_for_ranges(&self, reference: &Template, ranges: &[ShiftRange], out: &mut [Option<RotationMatch>]) {
        debug_assert_eq!(ranges.len(), out.len());
        out.iter_mut().for_each(|o| *o = None);
        for (shift, code, mask) in &self.rotations {
            let (disagree, valid) = bits::masked_counts(code, mask, &reference.code, &reference.mask);
            if valid == 0 {
                continue;
            }
            let counts = HammingCounts { disagree, valid };
            for (range, slot) in ranges.iter().zip(out.iter_mut()) {
                if range.contains(*shift) && slot.is_none_or(|cur| counts.is_lower_than(&cur.counts)) {
                    *slot = Some(RotationMatch { counts, shift: *shift });
                }
            }
        }
    }
}

/// Rotation tolerance used by a search: a narrow first pass and an optional
/// wider second pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RotationPolicy {
    pub narrow: ShiftRange,
    pub wide: ShiftRange,
    pub two_stage: bool,
}

impl RotationPolicy {
    pub fn new(narrow: ShiftRange, wide: ShiftRange, two_stage: bool) -> Result<Self, TemplateError> {
        if !wide.covers(&narrow) {
            return Err(TemplateError::InvalidPolicy(format!("wide range {wide} does not contain narrow range {narrow}")));
        }
        Ok(RotationPolicy { narrow, wide, two_stage })
    }

    /// A single pass over `[-k, +k]`.
    pub fn single_stage(k: u16) -> Self {
        let r = ShiftRange::symmetric(k);
        RotationPolicy { narrow: r, wide: r, two_stage: false }
    }

    /// A pass over `[-narrow, +narrow]`, then a rescan over `[-wide, +wide]`.
    pub fn two_stage(narrow: u16, wide: u16) -> Result<Self, TemplateError> {
        RotationPolicy::new(ShiftRange::symmetric(narrow), ShiftRange::symmetric(wide), true)
    }

    /// The widest range this policy ever evaluates.
    pub fn effective_range(&self) -> ShiftRange {
        if self.two_stage {
            self.wide
        } else {
            self.narrow
        }
    }

    /// Compact label: `7` for single-stage, `7/21` for two-stage symmetric
    /// policies.
    pub fn label(&self) -> String {
        let sym = |r: &ShiftRange| (r.lo == -r.hi).then_some(r.hi);
        match (self.two_stage, sym(&self.narrow), sym(&self.wide)) {
            (false, Some(k), _) => format!("{k}"),
            (true, Some(k1), Some(k2)) => format!("{k1}/{k2}"),
            (false, None, _) => format!("{}:{}", self.narrow.lo, self.narrow.hi),
            (true, _, _) => format!("{}:{}/{}:{}", self.narrow.lo, self.narrow.hi, self.wide.lo, self.wide.hi),
        }
    }
}

impl fmt::Display for RotationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for RotationPolicy {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TemplateError::InvalidPolicy(format!("cannot parse `{s}`"));
        let range = |part: &str| -> Result<ShiftRange, TemplateError> {
            match part.split_once(':') {
                Some((lo, hi)) => {
                    ShiftRange::new(lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?)
                }
                None => Ok(ShiftRange::symmetric(part.trim().parse().map_err(|_| bad())?)),
            }
        };
        match s.split_once('/') {
            Some((n, w)) => RotationPolicy::new(range(n)?, range(w)?, true),
            None => {
                let r = range(s)?;
                Ok(RotationPolicy { narrow: r, wide: r, two_stage: false })
            }
        }
    }
}
