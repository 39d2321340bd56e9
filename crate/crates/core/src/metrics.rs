//! Group fairness statistics over thresholded regression outputs.
//!
//! All rates treat `ŷ >= τ` as a predicted positive and `y < τ` as a
//! ground-truth negative. A statistic with no eligible examples is an
//! [`MetricError::Undefined`], never a silent zero.

mod binning;
mod conditional;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{partition_by_group, DataError, Dataset, Threshold};

pub use binning::{bin_assign, BinSpec, Prior, PRIOR_SUM_TOLERANCE};
pub use conditional::{
    calibration_gap, conditional_eo_gap, conditional_fpr_ratio, conditional_table, CalibrationBin, ConditionalBin,
    ConditionalGap, ConditionalTable, DEFAULT_MIN_CELL_COUNT,
};
pub use report::{
    aggregate_runs, evaluate_predictions, BinRow, Cell, CellKey, ConditionalCells, EvalSpec, GroupReport, MetricsReport,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {preds} predictions for {expected} examples")]
    LengthMismatch { preds: usize, expected: usize },
    #[error("undefined {metric}: {detail}")]
    Undefined { metric: &'static str, detail: String },
    #[error("invalid bins: {0}")]
    InvalidBins(String),
    #[error("value {value} outside bin range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("reports differ in structure: {0}")]
    StructureMismatch(String),
    #[error("aggregation needs at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MetricError {
    pub fn is_undefined(&self) -> bool {
        matches!(self, MetricError::Undefined { .. })
    }
}

fn undefined(metric: &'static str, detail: impl Into<String>) -> MetricError {
    MetricError::Undefined {
        metric,
        detail: detail.into(),
    }
}

/// `hits / total` with its denominator kept alongside.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: usize,
    pub total: usize,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }

    fn record(&mut self, hit: bool) {
        self.total += 1;
        self.hits += usize::from(hit);
    }
}

/// Ratio of two rates; a zero denominator under a positive numerator is
/// reported as unbounded rather than as an IEEE infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ratio {
    Finite(f64),
    Unbounded { numerator: f64 },
}

impl Ratio {
    fn of(metric: &'static str, numerator: f64, denominator: f64) -> Result<Ratio, MetricError> {
        if denominator > 0.0 {
            Ok(Ratio::Finite(numerator / denominator))
        } else if numerator > 0.0 {
            Ok(Ratio::Unbounded { numerator })
        } else {
            Err(undefined(metric, "numerator and denominator are both zero"))
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Ratio::Finite(v) => Some(v),
            Ratio::Unbounded { .. } => None,
        }
    }
}

fn check_len(preds: &[f64], expected: usize) -> Result<(), MetricError> {
    if preds.len() != expected {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            expected,
        });
    }
    Ok(())
}

fn fpr_rate<I: IntoIterator<Item = usize>>(preds: &[f64], labels: &[f64], tau: Threshold, idx: I) -> Rate {
    let mut rate = Rate::default();
    for i in idx {
        if tau.is_negative(labels[i]) {
            rate.record(tau.flags(preds[i]));
        }
    }
    rate
}

fn fnr_rate<I: IntoIterator<Item = usize>>(preds: &[f64], labels: &[f64], tau: Threshold, idx: I) -> Rate {
    let mut rate = Rate::default();
    for i in idx {
        if !tau.is_negative(labels[i]) {
            rate.record(!tau.flags(preds[i]));
        }
    }
    rate
}

/// Fraction of negatives (`y < τ`) predicted positive.
pub fn fpr(preds: &[f64], labels: &[f64], tau: Threshold) -> Result<f64, MetricError> {
    check_len(preds, labels.len())?;
    fpr_rate(preds, labels, tau, 0..labels.len())
        .value()
        .ok_or_else(|| undefined("fpr", "no examples with label below tau"))
}

/// Fraction of positives (`y >= τ`) predicted negative.
pub fn fnr(preds: &[f64], labels: &[f64], tau: Threshold) -> Result<f64, MetricError> {
    check_len(preds, labels.len())?;
    fnr_rate(preds, labels, tau, 0..labels.len())
        .value()
        .ok_or_else(|| undefined("fnr", "no examples with label at or above tau"))
}

/// Subgroup and background false positive rates for one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub subgroup: Rate,
    pub background: Rate,
}

pub fn group_fpr(preds: &[f64], dataset: &Dataset, group: &str, tau: Threshold) -> Result<GroupRates, MetricError> {
    check_len(preds, dataset.len())?;
    let part = partition_by_group(dataset, group)?;
    let labels = dataset.labels();
    Ok(GroupRates {
        subgroup: fpr_rate(preds, &labels, tau, part.in_group.iter().copied()),
        background: fpr_rate(preds, &labels, tau, part.out_group.iter().copied()),
    })
}

pub fn group_fnr(preds: &[f64], dataset: &Dataset, group: &str, tau: Threshold) -> Result<GroupRates, MetricError> {
    check_len(preds, dataset.len())?;
    let part = partition_by_group(dataset, group)?;
    let labels = dataset.labels();
    Ok(GroupRates {
        subgroup: fnr_rate(preds, &labels, tau, part.in_group.iter().copied()),
        background: fnr_rate(preds, &labels, tau, part.out_group.iter().copied()),
    })
}

fn both_defined(metric: &'static str, group: &str, rates: &GroupRates) -> Result<(f64, f64), MetricError> {
    match (rates.subgroup.value(), rates.background.value()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(undefined(
            metric,
            format!(
                "group `{group}` has {} subgroup and {} background negatives",
                rates.subgroup.total, rates.background.total
            ),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FprRatio {
    pub ratio: Ratio,
    pub rates: GroupRates,
}

/// `FPR(subgroup) / FPR(background)`.
pub fn fpr_ratio(preds: &[f64], dataset: &Dataset, group: &str, tau: Threshold) -> Result<FprRatio, MetricError> {
    let rates = group_fpr(preds, dataset, group, tau)?;
    let (a, b) = both_defined("fpr_ratio", group, &rates)?;
    Ok(FprRatio {
        ratio: Ratio::of("fpr_ratio", a, b)?,
        rates,
    })
}

/// Signed `P(ŷ >= τ | s = 1) - P(ŷ >= τ | s = 0)`.
pub fn demographic_parity_gap(
    preds: &[f64],
    dataset: &Dataset,
    group: &str,
    tau: Threshold,
) -> Result<f64, MetricError> {
    check_len(preds, dataset.len())?;
    let part = partition_by_group(dataset, group)?;
    let rate = |idx: &[usize]| {
        let mut r = Rate::default();
        for &i in idx {
            r.record(tau.flags(preds[i]));
        }
        r
    };
    match (rate(&part.in_group).value(), rate(&part.out_group).value()) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(undefined(
            "demographic_parity_gap",
            format!(
                "group `{group}` has {} members and {} non-members",
                part.in_group.len(),
                part.out_group.len()
            ),
        )),
    }
}

/// Signed `FPR(subgroup) - FPR(background)`.
pub fn eo_gap(preds: &[f64], dataset: &Dataset, group: &str, tau: Threshold) -> Result<f64, MetricError> {
    let rates = group_fpr(preds, dataset, group, tau)?;
    let (a, b) = both_defined("eo_gap", group, &rates)?;
    Ok(a - b)
}
