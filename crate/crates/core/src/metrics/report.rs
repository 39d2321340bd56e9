//! Full metrics report for one set of predictions, cell-wise run aggregation,
//! and its JSON / tidy CSV forms.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    calibration_gap, conditional_table, demographic_parity_gap, group_fnr, group_fpr, BinSpec, MetricError, Prior,
    Ratio, DEFAULT_MIN_CELL_COUNT,
};
use crate::dataset::{partition_by_group, Dataset, Threshold};

/// One reported number with its sample count. `value` is `None` when the
/// statistic had no eligible examples; `unbounded` marks a ratio with a zero
/// denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unbounded: bool,
}

impl Cell {
    pub fn defined(value: f64, count: usize) -> Self {
        Self {
            value: Some(value),
            count,
            stderr: None,
            unbounded: false,
        }
    }

    pub fn undefined(count: usize) -> Self {
        Self {
            value: None,
            count,
            stderr: None,
            unbounded: false,
        }
    }

    fn from_option(value: Option<f64>, count: usize) -> Self {
        match value {
            Some(v) => Self::defined(v, count),
            None => Self::undefined(count),
        }
    }

    fn from_result(result: Result<f64, MetricError>, count: usize) -> Result<Self, MetricError> {
        match result {
            Ok(v) => Ok(Self::defined(v, count)),
            Err(e) if e.is_undefined() => Ok(Self::undefined(count)),
            Err(e) => Err(e),
        }
    }

    fn from_ratio(result: Result<Ratio, MetricError>, count: usize) -> Result<Self, MetricError> {
        match result {
            Ok(Ratio::Finite(v)) => Ok(Self::defined(v, count)),
            Ok(Ratio::Unbounded { .. }) => Ok(Self {
                unbounded: true,
                ..Self::undefined(count)
            }),
            Err(e) if e.is_undefined() => Ok(Self::undefined(count)),
            Err(e) => Err(e),
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

/// One row of a per-bin table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub subgroup: Cell,
    pub background: Cell,
    pub gap: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCells {
    pub eo_gap: Cell,
    pub fpr_ratio: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub fpr_subgroup: Cell,
    pub fpr_background: Cell,
    pub fnr_subgroup: Cell,
    pub fnr_background: Cell,
    pub fpr_ratio: Cell,
    pub demographic_parity_gap: Cell,
    pub eo_gap: Cell,
    /// Keyed by prior name.
    pub conditional: BTreeMap<String, ConditionalCells>,
    /// FPR per rating bin of negatives, subgroup vs background.
    pub per_bin_fpr: Vec<BinRow>,
    /// Mean label per prediction bin, subgroup vs background.
    pub calibration: Vec<BinRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tau: f64,
    pub examples: usize,
    pub mse: Cell,
    pub groups: BTreeMap<String, GroupReport>,
}

/// Addresses one cell of a report.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub metric: String,
    pub group: Option<String>,
    pub bin: Option<usize>,
    pub prior: Option<String>,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.metric)?;
        if let Some(g) = &self.group {
            write!(f, "[group={g}]")?;
        }
        if let Some(p) = &self.prior {
            write!(f, "[prior={p}]")?;
        }
        if let Some(b) = self.bin {
            write!(f, "[bin={b}]")?;
        }
        Ok(())
    }
}

/// What to compute in [`evaluate_predictions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub tau: Threshold,
    /// Conditioning bins over the negative label range.
    pub bins: BinSpec,
    pub priors: Vec<Prior>,
    pub min_cell_count: usize,
    /// Prediction bins for the calibration table.
    pub calibration_bins: BinSpec,
}

impl EvalSpec {
    /// Four rating bins over `[0, τ)`, uniform/background/subgroup priors, a
    /// minimum cell count of 20 and ten calibration bins over `[0, 1]`.
    pub fn new(tau: Threshold) -> Self {
        Self {
            tau,
            bins: BinSpec::over_negatives(4, tau).expect("tau in (0, 1)"),
            priors: vec![Prior::Uniform, Prior::Background, Prior::Subgroup],
            min_cell_count: DEFAULT_MIN_CELL_COUNT,
            calibration_bins: BinSpec::new(10, 0.0, 1.0).expect("valid"),
        }
    }
}

fn prior_keys(priors: &[Prior]) -> Vec<String> {
    let mut keys: Vec<String> = Vec::with_capacity(priors.len());
    for p in priors {
        let base = p.name().to_string();
        let mut key = base.clone();
        let mut k = 2;
        while keys.contains(&key) {
            key = format!("{base}{k}");
            k += 1;
        }
        keys.push(key);
    }
    keys
}

/// Computes every statistic for every group of `dataset`. Statistics without
/// eligible examples become undefined cells.
pub fn evaluate_predictions(preds: &[f64], dataset: &Dataset, spec: &EvalSpec) -> Result<MetricsReport, MetricError> {
    super::check_len(preds, dataset.len())?;
    let tau = spec.tau;
    let labels = dataset.labels();
    let mse = if labels.is_empty() {
        Cell::undefined(0)
    } else {
        let sum: f64 = preds.iter().zip(&labels).map(|(p, y)| (p - y) * (p - y)).sum();
        Cell::defined(sum / labels.len() as f64, labels.len())
    };
    let keys = prior_keys(&spec.priors);
    let mut groups = BTreeMap::new();
    for group in dataset.group_names() {
        let fpr = group_fpr(preds, dataset, group, tau)?;
        let fnr = group_fnr(preds, dataset, group, tau)?;
        let part = partition_by_group(dataset, group)?;
        let neg_count = fpr.subgroup.total + fpr.background.total;
        let fpr_ratio = match (fpr.subgroup.value(), fpr.background.value()) {
            (Some(a), Some(b)) => Cell::from_ratio(Ratio::of("fpr_ratio", a, b), neg_count)?,
            _ => Cell::undefined(neg_count),
        };
        let eo_gap = match (fpr.subgroup.value(), fpr.background.value()) {
            (Some(a), Some(b)) => Cell::defined(a - b, neg_count),
            _ => Cell::undefined(neg_count),
        };
        let dp = Cell::from_result(
            demographic_parity_gap(preds, dataset, group, tau),
            part.in_group.len() + part.out_group.len(),
        )?;

        let table = conditional_table(preds, dataset, group, tau, &spec.bins, spec.min_cell_count)?;
        let used: usize = table
            .bins
            .iter()
            .filter(|b| b.included)
            .map(|b| b.subgroup.total + b.background.total)
            .sum();
        let mut conditional = BTreeMap::new();
        for (prior, key) in spec.priors.iter().zip(&keys) {
            let eo = Cell::from_result(table.eo_gap(prior).map(|g| g.value), used)?;
            let ratio = Cell::from_ratio(table.fpr_ratio(prior), used)?;
            conditional.insert(
                key.clone(),
                ConditionalCells {
                    eo_gap: eo,
                    fpr_ratio: ratio,
                },
            );
        }
        let per_bin_fpr = table
            .bins
            .iter()
            .map(|b| BinRow {
                bin: b.bin,
                lo: b.lo,
                hi: b.hi,
                subgroup: Cell::from_option(b.subgroup.value(), b.subgroup.total),
                background: Cell::from_option(b.background.value(), b.background.total),
                gap: Cell::from_option(b.gap(), b.subgroup.total + b.background.total),
            })
            .collect();
        let calibration = calibration_gap(preds, dataset, group, &spec.calibration_bins)?
            .into_iter()
            .map(|b| BinRow {
                bin: b.bin,
                lo: b.lo,
                hi: b.hi,
                subgroup: Cell::from_option(b.subgroup_mean, b.subgroup_count),
                background: Cell::from_option(b.background_mean, b.background_count),
                gap: Cell::from_option(b.gap(), b.subgroup_count + b.background_count),
            })
            .collect();
        groups.insert(
            group.clone(),
            GroupReport {
                fpr_subgroup: Cell::from_option(fpr.subgroup.value(), fpr.subgroup.total),
                fpr_background: Cell::from_option(fpr.background.value(), fpr.background.total),
                fnr_subgroup: Cell::from_option(fnr.subgroup.value(), fnr.subgroup.total),
                fnr_background: Cell::from_option(fnr.background.value(), fnr.background.total),
                fpr_ratio,
                demographic_parity_gap: dp,
                eo_gap,
                conditional,
                per_bin_fpr,
                calibration,
            },
        );
    }
    Ok(MetricsReport {
        tau: tau.value(),
        examples: dataset.len(),
        mse,
        groups,
    })
}

fn key(metric: &str, group: Option<&str>, bin: Option<usize>, prior: Option<&str>) -> CellKey {
    CellKey {
        metric: metric.to_string(),
        group: group.map(str::to_string),
        bin,
        prior: prior.map(str::to_string),
    }
}

impl GroupReport {
    fn visit<'a>(&'a self, group: &str, out: &mut Vec<(CellKey, &'a Cell)>) {
        let g = Some(group);
        for (name, cell) in [
            ("fpr_subgroup", &self.fpr_subgroup),
            ("fpr_background", &self.fpr_background),
            ("fnr_subgroup", &self.fnr_subgroup),
            ("fnr_background", &self.fnr_background),
            ("fpr_ratio", &self.fpr_ratio),
            ("demographic_parity_gap", &self.demographic_parity_gap),
            ("eo_gap", &self.eo_gap),
        ] {
            out.push((key(name, g, None, None), cell));
        }
        for (prior, c) in &self.conditional {
            out.push((key("conditional_eo_gap", g, None, Some(prior)), &c.eo_gap));
            out.push((key("conditional_fpr_ratio", g, None, Some(prior)), &c.fpr_ratio));
        }
        for (prefix, rows) in [("bin_fpr", &self.per_bin_fpr), ("calibration", &self.calibration)] {
            for row in rows {
                let b = Some(row.bin);
                out.push((key(&format!("{prefix}_subgroup"), g, b, None), &row.subgroup));
                out.push((key(&format!("{prefix}_background"), g, b, None), &row.background));
                out.push((key(&format!("{prefix}_gap"), g, b, None), &row.gap));
            }
        }
    }

    fn cells_mut(&mut self) -> Vec<&mut Cell> {
        let mut out: Vec<&mut Cell> = vec![
            &mut self.fpr_subgroup,
            &mut self.fpr_background,
            &mut self.fnr_subgroup,
            &mut self.fnr_background,
            &mut self.fpr_ratio,
            &mut self.demographic_parity_gap,
            &mut self.eo_gap,
        ];
        for c in self.conditional.values_mut() {
            out.push(&mut c.eo_gap);
            out.push(&mut c.fpr_ratio);
        }
        for row in self.per_bin_fpr.iter_mut().chain(self.calibration.iter_mut()) {
            out.push(&mut row.subgroup);
            out.push(&mut row.background);
            out.push(&mut row.gap);
        }
        out
    }
}

impl MetricsReport {
    /// Every cell with its address, in a fixed order.
    pub fn cells(&self) -> Vec<(CellKey, &Cell)> {
        let mut out = vec![(key("mse", None, None, None), &self.mse)];
        for (name, g) in &self.groups {
            g.visit(name, &mut out);
        }
        out
    }

    fn cells_mut(&mut self) -> Vec<&mut Cell> {
        let mut out = vec![&mut self.mse];
        for g in self.groups.values_mut() {
            out.extend(g.cells_mut());
        }
        out
    }

    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.get(name)
    }

    pub fn to_json(&self) -> Result<String, MetricError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MetricError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Tidy CSV: `metric,group,bin,prior,value,count,stderr`. Undefined values
    /// are empty; unbounded ratios are `inf`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["metric", "group", "bin", "prior", "value", "count", "stderr"])?;
        for (k, cell) in self.cells() {
            let value = match (cell.value, cell.unbounded) {
                (Some(v), _) => v.to_string(),
                (None, true) => "inf".to_string(),
                (None, false) => String::new(),
            };
            wtr.write_record([
                k.metric,
                k.group.unwrap_or_default(),
                k.bin.map(|b| b.to_string()).unwrap_or_default(),
                k.prior.unwrap_or_default(),
                value,
                cell.count.to_string(),
                cell.stderr.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush().map_err(|e| MetricError::Csv(e.into()))?;
        Ok(())
    }
}

/// Cell-wise mean and standard error (sample stddev / sqrt(n)) over runs.
///
/// A cell undefined in any run stays undefined; otherwise a cell unbounded in
/// any run stays unbounded. Counts are the minimum over runs.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport, MetricError> {
    if reports.len() < 2 {
        return Err(MetricError::TooFewReports(reports.len()));
    }
    let first = &reports[0];
    let keys: Vec<CellKey> = first.cells().into_iter().map(|(k, _)| k).collect();
    let mut columns: Vec<Vec<&Cell>> = vec![Vec::with_capacity(reports.len()); keys.len()];
    for (r, report) in reports.iter().enumerate() {
        if report.tau != first.tau {
            return Err(MetricError::StructureMismatch(format!(
                "run {r} uses tau {} instead of {}",
                report.tau, first.tau
            )));
        }
        let cells = report.cells();
        if cells.len() != keys.len() {
            return Err(MetricError::StructureMismatch(format!(
                "run {r} has {} cells, run 0 has {}",
                cells.len(),
                keys.len()
            )));
        }
        for (i, (k, cell)) in cells.into_iter().enumerate() {
            if k != keys[i] {
                return Err(MetricError::StructureMismatch(format!(
                    "run {r} has {k} where run 0 has {}",
                    keys[i]
                )));
            }
            columns[i].push(cell);
        }
    }
    let mut out = first.clone();
    let n = reports.len() as f64;
    for (target, column) in out.cells_mut().into_iter().zip(columns) {
        let count = column.iter().map(|c| c.count).min().unwrap_or(0);
        let values: Option<Vec<f64>> = column.iter().map(|c| c.value).collect();
        *target = match values {
            Some(values) => {
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                Cell {
                    value: Some(mean),
                    count,
                    stderr: Some(var.sqrt() / n.sqrt()),
                    unbounded: false,
                }
            }
            None => {
                let any_undefined = column.iter().any(|c| c.value.is_none() && !c.unbounded);
                Cell {
                    value: None,
                    count,
                    stderr: None,
                    unbounded: !any_undefined,
                }
            }
        };
    }
    Ok(out)
}
