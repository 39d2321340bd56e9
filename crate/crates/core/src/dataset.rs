//! Example/label data model: rater aggregation, group partitioning and the
//! negative-set restriction every fairness statistic is defined over.

mod io;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_dataset, read_csv, read_json, save_dataset, write_csv, write_json, Format};

/// Tolerance for disagreement between an explicit label column and the
/// rater mean.
pub const LABEL_MISMATCH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("no ratings")]
    NoRatings,
    #[error("rating out of range: {0}")]
    RatingOutOfRange(f64),
    #[error("label out of range: {0}")]
    LabelOutOfRange(f64),
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("example {index}: expected {expected} features, found {found}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("example {index}: expected {expected} rater scores, found {found}")]
    RaterCountMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite feature value at position {position}")]
    NonFiniteFeature { position: usize },
    #[error("unknown group `{name}`; available groups: [{available}]")]
    UnknownGroup { name: String, available: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Policy threshold τ, strictly inside (0, 1).
///
/// Ground-truth negatives satisfy `y < τ`; an adverse action is taken on
/// predictions `ŷ >= τ`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(value: f64) -> Result<Self, DataError> {
        if value.is_finite() && value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(DataError::InvalidThreshold(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Ground-truth negative: `label < τ`.
    #[inline]
    pub fn is_negative(self, label: f64) -> bool {
        label < self.0
    }

    /// Predicted positive: `prediction >= τ`.
    #[inline]
    pub fn flags(self, prediction: f64) -> bool {
        prediction >= self.0
    }
}

impl TryFrom<f64> for Threshold {
    type Error = DataError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Mean of the rater scores; this mean is the ground-truth label.
pub fn aggregate_ratings(scores: &[f64]) -> Result<f64, DataError> {
    if scores.is_empty() {
        return Err(DataError::NoRatings);
    }
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(DataError::RatingOutOfRange(bad));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// A single rated item.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    features: Vec<f64>,
    rater_scores: Vec<f64>,
    label: f64,
    groups: BTreeMap<String, bool>,
}

impl Example {
    /// Builds an example whose label is the mean of `rater_scores`.
    pub fn from_ratings(
        features: Vec<f64>,
        rater_scores: Vec<f64>,
        groups: BTreeMap<String, bool>,
    ) -> Result<Self, DataError> {
        check_features(&features)?;
        let label = aggregate_ratings(&rater_scores)?;
        Ok(Self {
            features,
            rater_scores,
            label,
            groups,
        })
    }

    /// Builds an example from a directly supplied label (no rater columns).
    pub fn from_label(features: Vec<f64>, label: f64, groups: BTreeMap<String, bool>) -> Result<Self, DataError> {
        check_features(&features)?;
        if !(0.0..=1.0).contains(&label) {
            return Err(DataError::LabelOutOfRange(label));
        }
        Ok(Self {
            features,
            rater_scores: Vec::new(),
            label,
            groups,
        })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rater_scores(&self) -> &[f64] {
        &self.rater_scores
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    /// Membership flag for `group`; `None` when demographics were not shared.
    pub fn group(&self, group: &str) -> Option<bool> {
        self.groups.get(group).copied()
    }

    pub fn groups(&self) -> &BTreeMap<String, bool> {
        &self.groups
    }
}

fn check_features(features: &[f64]) -> Result<(), DataError> {
    match features.iter().position(|v| !v.is_finite()) {
        Some(position) => Err(DataError::NonFiniteFeature { position }),
        None => Ok(()),
    }
}

/// An ordered, immutable collection of examples sharing one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
    group_names: Vec<String>,
    rater_count: usize,
}

impl Dataset {
    pub fn new(
        dim: usize,
        rater_count: usize,
        group_names: Vec<String>,
        examples: Vec<Example>,
    ) -> Result<Self, DataError> {
        for (index, ex) in examples.iter().enumerate() {
            if ex.features.len() != dim {
                return Err(DataError::DimensionMismatch {
                    index,
                    expected: dim,
                    found: ex.features.len(),
                });
            }
            if ex.rater_scores.len() != rater_count {
                return Err(DataError::RaterCountMismatch {
                    index,
                    expected: rater_count,
                    found: ex.rater_scores.len(),
                });
            }
            if let Some(name) = ex.groups.keys().find(|g| !group_names.contains(g)) {
                return Err(DataError::UnknownGroup {
                    name: name.clone(),
                    available: group_names.join(", "),
                });
            }
        }
        Ok(Self {
            examples,
            dim,
            group_names,
            rater_count,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn rater_count(&self) -> usize {
        self.rater_count
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.group_names.iter().any(|g| g == group)
    }

    fn require_group(&self, group: &str) -> Result<(), DataError> {
        if self.has_group(group) {
            Ok(())
        } else {
            Err(DataError::UnknownGroup {
                name: group.to_string(),
                available: self.group_names.join(", "),
            })
        }
    }

    /// Per-example membership flags for `group`.
    pub fn group_flags(&self, group: &str) -> Result<Vec<Option<bool>>, DataError> {
        self.require_group(group)?;
        Ok(self.examples.iter().map(|e| e.group(group)).collect())
    }

    /// New dataset holding the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            dim: self.dim,
            group_names: self.group_names.clone(),
            rater_count: self.rater_count,
        }
    }

    /// Splits at `round(len * fraction)`: the head goes left, the tail right.
    pub fn split_at_fraction(&self, fraction: f64) -> (Dataset, Dataset) {
        let cut = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// Returns true when `other` has the same feature dimension and group names.
    pub fn same_schema(&self, other: &Dataset) -> bool {
        self.dim == other.dim && self.group_names == other.group_names
    }
}

/// Indices of ground-truth negatives (`y < τ`) within a dataset.
#[derive(Debug, Clone)]
pub struct NegativeSlice<'a> {
    parent: &'a Dataset,
    indices: Vec<usize>,
    tau: Threshold,
}

impl<'a> NegativeSlice<'a> {
    pub fn parent(&self) -> &'a Dataset {
        self.parent
    }

    /// Sorted ascending, duplicate-free.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn tau(&self) -> Threshold {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Example> + '_ {
        self.indices.iter().map(|&i| &self.parent.examples[i])
    }
}

pub fn negatives(dataset: &Dataset, tau: Threshold) -> NegativeSlice<'_> {
    let indices = dataset
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| tau.is_negative(e.label))
        .map(|(i, _)| i)
        .collect();
    NegativeSlice {
        parent: dataset,
        indices,
        tau,
    }
}

/// Disjoint cover of a dataset's indices by membership in one group.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupPartition {
    pub in_group: Vec<usize>,
    pub out_group: Vec<usize>,
    pub unknown: Vec<usize>,
}

pub fn partition_by_group(dataset: &Dataset, group: &str) -> Result<GroupPartition, DataError> {
    dataset.require_group(group)?;
    let mut part = GroupPartition::default();
    for (i, ex) in dataset.examples.iter().enumerate() {
        match ex.group(group) {
            Some(true) => part.in_group.push(i),
            Some(false) => part.out_group.push(i),
            None => part.unknown.push(i),
        }
    }
    Ok(part)
}
