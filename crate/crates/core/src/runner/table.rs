//! Per-probe best-of-rotation counts against every gallery entry, for each
//! shift range a sweep needs. Computed once per scenario and shared by all
//! permutations, thresholds and strategies.

use rayon::prelude::*;

use crate::scenario::{Gallery, ProbeSet};
use crate::templates::{HammingCounts, RotatedProbe, RotationMatch, ShiftRange, TemplateError};

const NO_OVERLAP: HammingCounts = HammingCounts { disagree: 0, valid: 0 };

pub(crate) struct ScoreTable {
    ranges: Vec<ShiftRange>,
    n_entries: usize,
    /// `[probe][range][entry]`, entries in gallery order.
    data: Vec<HammingCounts>,
}

impl ScoreTable {
    pub(crate) fn compute(gallery: &Gallery, probes: &ProbeSet, ranges: &[ShiftRange]) -> Result<Self, TemplateError> {
        let lo = ranges.iter().map(|r| r.lo()).min().expect("at least one range");
        let hi = ranges.iter().map(|r| r.hi()).max().expect("at least one range");
        let union = ShiftRange::new(lo, hi)?;
        let n_entries = gallery.len();
        let row = ranges.len() * n_entries;
        for p in &probes.probes {
            for e in gallery.entries() {
                if e.template.geometry() != p.template.geometry() {
                    return Err(TemplateError::Incompatible(p.template.geometry(), e.template.geometry()));
                }
            }
        }
        let mut data = vec![NO_OVERLAP; probes.len() * row];
        data.par_chunks_mut(row.max(1)).zip(probes.probes.par_iter()).try_for_each(|(out, probe)| {
            let rotated = RotatedProbe::new(&probe.template, union)?;
            let mut best: Vec<Option<RotationMatch>> = vec![None; ranges.len()];
            for (e, entry) in gallery.entries().iter().enumerate() {
                rotated.best_for_ranges(&entry.template, ranges, &mut best);
                for (r, m) in best.iter().enumerate() {
                    out[r * n_entries + e] = m.map_or(NO_OVERLAP, |m| m.counts);
                }
            }
            Ok::<_, TemplateError>(())
        })?;
        Ok(ScoreTable { ranges: ranges.to_vec(), n_entries, data })
    }

    pub(crate) fn slot(&self, range: ShiftRange) -> usize {
        self.ranges.iter().position(|r| *r == range).expect("range was tabulated")
    }

    /// Counts of `probe` against gallery entry `entry` (gallery order).
    #[inline]
    pub(crate) fn get(&self, probe: usize, slot: usize, entry: usize) -> Option<HammingCounts> {
        let c = self.data[(probe * self.ranges.len() + slot) * self.n_entries + entry];
        (c.valid > 0).then_some(c)
    }
}
