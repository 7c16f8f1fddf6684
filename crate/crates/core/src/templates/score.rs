use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use super::TemplateError;

/// Top of the similarity scale produced by [`Polarity::Similarity`] scoring.
pub const SIMILARITY_SCALE: f64 = 1000.0;

/// Direction of a matcher's score scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    /// Lower is better; values are fractional Hamming distances in `[0, 1]`.
    Dissimilarity,
    /// Higher is better; values are non-negative.
    Similarity,
}

impl Polarity {
    /// Expresses a raw (disagreeing, valid) bit count in this scale.
    ///
    /// Similarity scores are `SIMILARITY_SCALE * (1 - hd)`, which preserves
    /// the ordering of the underlying Hamming distances.
    pub fn express(self, disagree: u32, valid: u32) -> Score {
        debug_assert!(valid > 0 && disagree <= valid);
        let value = match self {
            Polarity::Dissimilarity => disagree as f64 / valid as f64,
            Polarity::Similarity => SIMILARITY_SCALE * (valid - disagree) as f64 / valid as f64,
        };
        Score { value, polarity: self }
    }

    /// Score of a bit-identical pair.
    pub fn perfect(self) -> f64 {
        match self {
            Polarity::Dissimilarity => 0.0,
            Polarity::Similarity => SIMILARITY_SCALE,
        }
    }

    /// Maps a value onto an axis where smaller always means a better match.
    #[inline]
    pub(crate) fn key(self, value: f64) -> f64 {
        match self {
            Polarity::Dissimilarity => value,
            Polarity::Similarity => -value,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Dissimilarity => "dissimilarity",
            Polarity::Similarity => "similarity",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dissimilarity" | "hamming" => Ok(Polarity::Dissimilarity),
            "similarity" => Ok(Polarity::Similarity),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

/// A comparison score tagged with the polarity of its scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    value: f64,
    polarity: Polarity,
}

impl Score {
    pub fn new(value: f64, polarity: Polarity) -> Result<Self, TemplateError> {
        let ok = value.is_finite()
            && match polarity {
                Polarity::Dissimilarity => (0.0..=1.0).contains(&value),
                Polarity::Similarity => value >= 0.0,
            };
        if !ok {
            return Err(TemplateError::ScoreOutOfRange { value, polarity });
        }
        Ok(Score { value, polarity })
    }

    pub fn dissimilarity(value: f64) -> Result<Self, TemplateError> {
        Score::new(value, Polarity::Dissimilarity)
    }

    pub fn similarity(value: f64) -> Result<Self, TemplateError> {
        Score::new(value, Polarity::Similarity)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    /// Orders two scores by match quality; `Less` means `self` is the better
    /// match.
    pub fn quality_cmp(&self, other: &Score) -> Result<Ordering, TemplateError> {
        if self.polarity != other.polarity {
            return Err(TemplateError::PolarityMismatch);
        }
        let (a, b) = (self.polarity.key(self.value), self.polarity.key(other.value));
        Ok(a.total_cmp(&b))
    }
}

/// A decision threshold on a matcher scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub value: f64,
    pub polarity: Polarity,
}

impl Threshold {
    pub fn new(value: f64, polarity: Polarity) -> Self {
        Threshold { value, polarity }
    }

    pub fn dissimilarity(value: f64) -> Self {
        Threshold::new(value, Polarity::Dissimilarity)
    }

    pub fn similarity(value: f64) -> Self {
        Threshold::new(value, Polarity::Similarity)
    }

    /// Unchecked variant of [`meets_threshold`] for callers that already
    /// know the polarities agree.
    #[inline]
    pub(crate) fn admits(&self, value: f64) -> bool {
        self.polarity.key(value) <= self.polarity.key(self.value)
    }
}

/// `true` when the score is at least as good as the threshold.
pub fn meets_threshold(score: &Score, threshold: &Threshold) -> Result<bool, TemplateError> {
    if score.polarity != threshold.polarity {
        return Err(TemplateError::PolarityMismatch);
    }
    Ok(threshold.admits(score.value))
}
