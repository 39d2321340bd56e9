//! Equality of opportunity conditioned on the binned aggregated rating.

use serde::{Deserialize, Serialize};

use super::{check_len, undefined, BinSpec, MetricError, Prior, Rate, Ratio};
use crate::dataset::{partition_by_group, Dataset, Threshold};

/// Bins with fewer subgroup or background negatives than this are dropped
/// from prior-weighted sums.
pub const DEFAULT_MIN_CELL_COUNT: usize = 20;

/// FPR of subgroup and background negatives whose label falls in one bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBin {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub subgroup: Rate,
    pub background: Rate,
    /// Both sides meet the minimum cell count.
    pub included: bool,
}

impl ConditionalBin {
    pub fn gap(&self) -> Option<f64> {
        Some(self.subgroup.value()? - self.background.value()?)
    }
}

/// Per-bin FPR table for one group; priors are applied on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    pub group: String,
    pub bins: Vec<ConditionalBin>,
    pub min_cell_count: usize,
}

/// Prior-weighted gap plus the weights actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGap {
    pub value: f64,
    /// Renormalised weight per bin; `None` for dropped bins.
    pub weights: Vec<Option<f64>>,
    pub table: ConditionalTable,
}

/// Builds the per-bin table. The conditioning feature is the aggregated
/// label of each negative; `bins` normally spans `[0, τ)`.
pub fn conditional_table(
    preds: &[f64],
    dataset: &Dataset,
    group: &str,
    tau: Threshold,
    bins: &BinSpec,
    min_cell_count: usize,
) -> Result<ConditionalTable, MetricError> {
    check_len(preds, dataset.len())?;
    let part = partition_by_group(dataset, group)?;
    let mut table: Vec<ConditionalBin> = (0..bins.count())
        .map(|b| {
            let (lo, hi) = bins.edges(b);
            ConditionalBin {
                bin: b,
                lo,
                hi,
                subgroup: Rate::default(),
                background: Rate::default(),
                included: false,
            }
        })
        .collect();
    let examples = dataset.examples();
    for (members, in_group) in [(&part.in_group, true), (&part.out_group, false)] {
        for &i in members {
            let y = examples[i].label();
            if !tau.is_negative(y) {
                continue;
            }
            let cell = &mut table[bins.index(y)?];
            let rate = if in_group {
                &mut cell.subgroup
            } else {
                &mut cell.background
            };
            rate.record(tau.flags(preds[i]));
        }
    }
    let floor = min_cell_count.max(1);
    for cell in &mut table {
        cell.included = cell.subgroup.total >= floor && cell.background.total >= floor;
    }
    Ok(ConditionalTable {
        group: group.to_string(),
        bins: table,
        min_cell_count,
    })
}

impl ConditionalTable {
    fn counts(&self) -> (Vec<usize>, Vec<usize>) {
        self.bins.iter().map(|b| (b.subgroup.total, b.background.total)).unzip()
    }

    fn describe_counts(&self) -> String {
        let cells: Vec<String> = self
            .bins
            .iter()
            .map(|b| format!("bin {}: {}/{}", b.bin, b.subgroup.total, b.background.total))
            .collect();
        format!(
            "every bin below min_cell_count={} (subgroup/background negatives: {})",
            self.min_cell_count,
            cells.join(", ")
        )
    }

    /// Prior weights renormalised over the included bins.
    pub fn effective_weights(&self, prior: &Prior) -> Result<Vec<Option<f64>>, MetricError> {
        let (sub, back) = self.counts();
        let raw = prior.weights(self.bins.len(), &sub, &back)?;
        let mass: f64 = self
            .bins
            .iter()
            .zip(&raw)
            .filter(|(b, _)| b.included)
            .map(|(_, w)| w)
            .sum();
        if !self.bins.iter().any(|b| b.included) {
            return Err(undefined("conditional metric", self.describe_counts()));
        }
        if mass <= 0.0 {
            return Err(undefined(
                "conditional metric",
                format!("prior `{}` puts no mass on the surviving bins", prior.name()),
            ));
        }
        Ok(self
            .bins
            .iter()
            .zip(raw)
            .map(|(b, w)| b.included.then(|| w / mass))
            .collect())
    }

    /// `sum_a p_a [FPR(s=1, a) - FPR(s=0, a)]` over the included bins. The
    /// uniform prior is the plain mean of the included gaps.
    pub fn eo_gap(&self, prior: &Prior) -> Result<ConditionalGap, MetricError> {
        let weights = self.effective_weights(prior)?;
        let value = match prior {
            Prior::Uniform => {
                let gaps: Vec<f64> = self.included_gaps().collect();
                gaps.iter().sum::<f64>() / gaps.len() as f64
            }
            _ => self
                .bins
                .iter()
                .zip(&weights)
                .filter_map(|(b, w)| Some(w.as_ref()? * b.gap()?))
                .sum(),
        };
        Ok(ConditionalGap {
            value,
            weights,
            table: self.clone(),
        })
    }

    fn included_gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.bins.iter().filter(|b| b.included).filter_map(ConditionalBin::gap)
    }

    /// `(sum_a p_a FPR(s=1, a)) / (sum_a p_a FPR(s=0, a))`.
    pub fn fpr_ratio(&self, prior: &Prior) -> Result<Ratio, MetricError> {
        let weights = self.effective_weights(prior)?;
        let (mut num, mut den) = (0.0, 0.0);
        for (b, w) in self.bins.iter().zip(&weights) {
            if let (Some(w), Some(a), Some(c)) = (w, b.subgroup.value(), b.background.value()) {
                num += w * a;
                den += w * c;
            }
        }
        Ratio::of("conditional_fpr_ratio", num, den)
    }
}

pub fn conditional_eo_gap(
    preds: &[f64],
    dataset: &Dataset,
    group: &str,
    tau: Threshold,
    bins: &BinSpec,
    prior: &Prior,
    min_cell_count: usize,
) -> Result<ConditionalGap, MetricError> {
    conditional_table(preds, dataset, group, tau, bins, min_cell_count)?.eo_gap(prior)
}

pub fn conditional_fpr_ratio(
    preds: &[f64],
    dataset: &Dataset,
    group: &str,
    tau: Threshold,
    bins: &BinSpec,
    prior: &Prior,
    min_cell_count: usize,
) -> Result<Ratio, MetricError> {
    conditional_table(preds, dataset, group, tau, bins, min_cell_count)?.fpr_ratio(prior)
}

/// Mean label per prediction bin for each side of a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub subgroup_mean: Option<f64>,
    pub background_mean: Option<f64>,
    pub subgroup_count: usize,
    pub background_count: usize,
}

impl CalibrationBin {
    /// `E[y | s=1, bin] - E[y | s=0, bin]`.
    pub fn gap(&self) -> Option<f64> {
        Some(self.subgroup_mean? - self.background_mean?)
    }
}

/// Binned calibration gap. Predictions are clamped to `[0, 1]` before binning.
pub fn calibration_gap(
    preds: &[f64],
    dataset: &Dataset,
    group: &str,
    bins: &BinSpec,
) -> Result<Vec<CalibrationBin>, MetricError> {
    check_len(preds, dataset.len())?;
    let part = partition_by_group(dataset, group)?;
    let mut sums = vec![[0.0f64; 2]; bins.count()];
    let mut counts = vec![[0usize; 2]; bins.count()];
    for (members, side) in [(&part.in_group, 0), (&part.out_group, 1)] {
        for &i in members {
            let b = bins.index(preds[i].clamp(0.0, 1.0))?;
            sums[b][side] += dataset.examples()[i].label();
            counts[b][side] += 1;
        }
    }
    Ok((0..bins.count())
        .map(|b| {
            let (lo, hi) = bins.edges(b);
            let mean = |side: usize| (counts[b][side] > 0).then(|| sums[b][side] / counts[b][side] as f64);
            CalibrationBin {
                bin: b,
                lo,
                hi,
                subgroup_mean: mean(0),
                background_mean: mean(1),
                subgroup_count: counts[b][0],
                background_count: counts[b][1],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::labelled;

    fn tau() -> Threshold {
        Threshold::new(0.5).unwrap()
    }

    /// Two bins over [0, 0.5): labels 0.1 (bin 0) and 0.4 (bin 1), `n` examples
    /// per (bin, side) with the given number flagged.
    fn two_bin_fixture(n: usize, flagged: [[usize; 2]; 2]) -> (Vec<f64>, Dataset) {
        let mut labels = Vec::new();
        let mut flags = Vec::new();
        let mut preds = Vec::new();
        for (bin, y) in [0.1, 0.4].into_iter().enumerate() {
            for (side, member) in [true, false].into_iter().enumerate() {
                for k in 0..n {
                    labels.push(y);
                    flags.push(Some(member));
                    preds.push(if k < flagged[bin][side] { 0.9 } else { 0.0 });
                }
            }
        }
        (preds, labelled(&labels, &flags))
    }

    fn bins2() -> BinSpec {
        BinSpec::new(2, 0.0, 0.5).unwrap()
    }

    #[test]
    fn uniform_gap_is_mean_of_bin_gaps() {
        // bin gaps: 0.3 - 0.2 = 0.1 and 0.5 - 0.2 = 0.3
        let (p, ds) = two_bin_fixture(10, [[3, 2], [5, 2]]);
        let g = conditional_eo_gap(&p, &ds, "g", tau(), &bins2(), &Prior::Uniform, 1).unwrap();
        assert!((g.value - 0.2).abs() < 1e-12);
        let g = conditional_eo_gap(&p, &ds, "g", tau(), &bins2(), &Prior::Explicit(vec![0.75, 0.25]), 1).unwrap();
        assert!((g.value - 0.15).abs() < 1e-12);
    }

    #[test]
    fn zero_gaps_any_prior() {
        let (p, ds) = two_bin_fixture(10, [[3, 3], [6, 6]]);
        for prior in [
            Prior::Uniform,
            Prior::Background,
            Prior::Subgroup,
            Prior::Explicit(vec![0.1, 0.9]),
        ] {
            let g = conditional_eo_gap(&p, &ds, "g", tau(), &bins2(), &prior, 1).unwrap();
            assert_eq!(g.value, 0.0);
        }
    }

    #[test]
    fn ratio_of_average_fprs() {
        // s=1: [0.2, 0.4], s=0: [0.1, 0.2]
        let (p, ds) = two_bin_fixture(10, [[2, 1], [4, 2]]);
        let r = conditional_fpr_ratio(&p, &ds, "g", tau(), &bins2(), &Prior::Uniform, 1).unwrap();
        assert!((r.finite().unwrap() - 2.0).abs() < 1e-12);
        let r = conditional_fpr_ratio(&p, &ds, "g", tau(), &bins2(), &Prior::Explicit(vec![1.0, 0.0]), 1).unwrap();
        assert!((r.finite().unwrap() - 2.0).abs() < 1e-12);
        let (p, ds) = two_bin_fixture(10, [[2, 2], [4, 4]]);
        let r = conditional_fpr_ratio(&p, &ds, "g", tau(), &bins2(), &Prior::Uniform, 1).unwrap();
        assert_eq!(r, Ratio::Finite(1.0));
    }

    #[test]
    fn sparse_bins_are_dropped_and_renormalised() {
        let (p, ds) = two_bin_fixture(10, [[3, 2], [5, 2]]);
        // min 20 > 10 in every cell: nothing survives
        let err = conditional_eo_gap(&p, &ds, "g", tau(), &bins2(), &Prior::Uniform, 20).unwrap_err();
        assert!(err.is_undefined());
        assert!(err.to_string().contains("bin 0: 10/10"), "{err}");

        // Only bin 1 populated: explicit prior's mass on bin 1 gets renormalised.
        let labels = [0.4; 4];
        let flags = [Some(true), Some(true), Some(false), Some(false)];
        let ds = labelled(&labels, &flags);
        let p = [0.9, 0.0, 0.0, 0.0];
        let g = conditional_eo_gap(&p, &ds, "g", tau(), &bins2(), &Prior::Explicit(vec![0.75, 0.25]), 1).unwrap();
        assert_eq!(g.weights, vec![None, Some(1.0)]);
        assert!((g.value - 0.5).abs() < 1e-15);
        let err = conditional_eo_gap(&p, &ds, "g", tau(), &bins2(), &Prior::Explicit(vec![1.0, 0.0]), 1).unwrap_err();
        assert!(err.is_undefined());
    }

    #[test]
    fn calibration_gap_fixture() {
        // Two prediction bins over [0, 1].
        // bin 0 (pred 0.2): subgroup labels {0.1, 0.3}, background {0.1}
        // bin 1 (pred 0.8): subgroup {0.9}, background {0.6, 0.8}
        // gaps: 0.2 - 0.1 = 0.1 and 0.9 - 0.7 = 0.2
        let labels = [0.1, 0.3, 0.1, 0.9, 0.6, 0.8];
        let flags = [
            Some(true),
            Some(true),
            Some(false),
            Some(true),
            Some(false),
            Some(false),
        ];
        let preds = [0.2, 0.2, 0.2, 0.8, 0.8, 1.7];
        let ds = labelled(&labels, &flags);
        let bins = BinSpec::new(2, 0.0, 1.0).unwrap();
        let table = calibration_gap(&preds, &ds, "g", &bins).unwrap();
        assert!((table[0].gap().unwrap() - 0.1).abs() < 1e-12);
        assert!((table[1].gap().unwrap() - 0.2).abs() < 1e-12);
        assert_eq!((table[1].subgroup_count, table[1].background_count), (1, 2));

        // single bin: difference of mean labels
        let one = BinSpec::new(1, 0.0, 1.0).unwrap();
        let t = calibration_gap(&preds, &ds, "g", &one).unwrap();
        let expected = (0.1 + 0.3 + 0.9) / 3.0 - (0.1 + 0.6 + 0.8) / 3.0;
        assert!((t[0].gap().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn calibration_identical_groups_zero() {
        let labels = [0.1, 0.1, 0.7, 0.7];
        let flags = [Some(true), Some(false), Some(true), Some(false)];
        let ds = labelled(&labels, &flags);
        let t = calibration_gap(&[0.1, 0.1, 0.6, 0.6], &ds, "g", &BinSpec::new(3, 0.0, 1.0).unwrap()).unwrap();
        assert!(t.iter().all(|b| b.gap().is_none_or(|g| g == 0.0)));
        assert!(t[2].gap().is_none());
    }
}
