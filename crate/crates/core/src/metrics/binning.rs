use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::dataset::Threshold;

pub const PRIOR_SUM_TOLERANCE: f64 = 1e-12;

/// `count` equal-width bins over `[lo, hi)`; `hi` itself lands in the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    count: usize,
    lo: f64,
    hi: f64,
}

impl BinSpec {
    pub fn new(count: usize, lo: f64, hi: f64) -> Result<Self, MetricError> {
        if count == 0 {
            return Err(MetricError::InvalidBins("bin count must be >= 1".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(MetricError::InvalidBins(format!(
                "need finite lo < hi, got [{lo}, {hi})"
            )));
        }
        Ok(Self { count, lo, hi })
    }

    /// Bins over the negative label range `[0, τ)`.
    pub fn over_negatives(count: usize, tau: Threshold) -> Result<Self, MetricError> {
        Self::new(count, 0.0, tau.value())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Lower and upper edge of bin `b`.
    pub fn edges(&self, b: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.count as f64;
        let upper = if b + 1 == self.count {
            self.hi
        } else {
            self.lo + width * (b + 1) as f64
        };
        (self.lo + width * b as f64, upper)
    }

    pub fn index(&self, value: f64) -> Result<usize, MetricError> {
        if !(value >= self.lo && value <= self.hi) {
            return Err(MetricError::OutOfRange {
                value,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let raw = (self.count as f64 * (value - self.lo) / (self.hi - self.lo)).floor() as usize;
        Ok(raw.min(self.count - 1))
    }
}

pub fn bin_assign(values: &[f64], bins: &BinSpec) -> Result<Vec<usize>, MetricError> {
    values.iter().map(|&v| bins.index(v)).collect()
}

/// Weighting of per-bin gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "weights", rename_all = "lowercase")]
pub enum Prior {
    /// `p_a = 1 / |A|`.
    Uniform,
    /// `p_a = P(A = a | s = 0)`, the empirical bin frequency among background
    /// negatives.
    Background,
    /// `p_a = P(A = a | s = 1)`, the empirical bin frequency among subgroup
    /// negatives.
    Subgroup,
    Explicit(Vec<f64>),
}

impl Prior {
    pub fn name(&self) -> &'static str {
        match self {
            Prior::Uniform => "uniform",
            Prior::Background => "background",
            Prior::Subgroup => "subgroup",
            Prior::Explicit(_) => "explicit",
        }
    }

    /// Parses `uniform`, `background`, `subgroup` or a comma/space separated
    /// list of explicit weights.
    pub fn parse(text: &str) -> Result<Prior, MetricError> {
        match text.trim() {
            "uniform" => Ok(Prior::Uniform),
            "background" => Ok(Prior::Background),
            "subgroup" => Ok(Prior::Subgroup),
            other => {
                let weights = other
                    .split([',', ' ', ':'])
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| MetricError::InvalidPrior(format!("cannot parse prior `{other}`")))?;
                Ok(Prior::Explicit(weights))
            }
        }
    }

    /// Full-length weight vector over `count` bins, before any bin is dropped.
    pub fn weights(
        &self,
        count: usize,
        subgroup_counts: &[usize],
        background_counts: &[usize],
    ) -> Result<Vec<f64>, MetricError> {
        let from_counts = |counts: &[usize], who: &str| {
            let total: usize = counts.iter().sum();
            if total == 0 {
                return Err(MetricError::Undefined {
                    metric: "prior",
                    detail: format!("no {who} negatives to estimate bin frequencies"),
                });
            }
            Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
        };
        match self {
            Prior::Uniform => Ok(vec![1.0 / count as f64; count]),
            Prior::Background => from_counts(background_counts, "background"),
            Prior::Subgroup => from_counts(subgroup_counts, "subgroup"),
            Prior::Explicit(w) => {
                if w.len() != count {
                    return Err(MetricError::InvalidPrior(format!(
                        "{} weights for {count} bins",
                        w.len()
                    )));
                }
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(MetricError::InvalidPrior("weights must be finite and >= 0".into()));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > PRIOR_SUM_TOLERANCE {
                    return Err(MetricError::InvalidPrior(format!("weights sum to {sum}, not 1")));
                }
                Ok(w.clone())
            }
        }
    }
}
