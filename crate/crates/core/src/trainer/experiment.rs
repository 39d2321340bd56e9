use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{train, ArchKind, RunResult, TrainConfig, TrainError};
use crate::config::{parse_sections, KeyValues};
use crate::dataset::Dataset;
use crate::metrics::{aggregate_runs, Cell, MetricError, MetricsReport};
use crate::regularization::{AdversarySpec, PenaltySpec};

/// Aggregated report plus every run, ordered by seed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub aggregate: MetricsReport,
    pub runs: Vec<RunResult>,
}

impl Experiment {
    /// Values of one headline cell across runs, in seed order; `None` where a
    /// run left it undefined.
    pub fn per_run<F>(&self, pick: F) -> Vec<Option<f64>>
    where
        F: Fn(&MetricsReport) -> Option<&Cell>,
    {
        self.runs
            .iter()
            .map(|r| pick(&r.report).and_then(|c| c.value))
            .collect()
    }
}

/// Trains seeds `seed..seed + runs` (in parallel) and aggregates the eval
/// reports in seed order. With one run the aggregate is that run's report.
pub fn run_experiment(config: &TrainConfig, train_set: &Dataset, eval_set: &Dataset) -> Result<Experiment, TrainError> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.runs as u64).map(|k| config.seed + k).collect();
    let results: Vec<Result<RunResult, TrainError>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            train(&cfg, train_set, eval_set).map_err(|e| TrainError::Run {
                seed,
                source: Box::new(e),
            })
        })
        .collect();
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let aggregate = if runs.len() == 1 {
        runs[0].report.clone()
    } else {
        let reports: Vec<MetricsReport> = runs.iter().map(|r| r.report.clone()).collect();
        aggregate_runs(&reports)?
    };
    Ok(Experiment { aggregate, runs })
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub name: String,
    pub config: TrainConfig,
    pub experiment: Experiment,
}

/// One aggregated row per protocol entry, in protocol order.
#[derive(Debug, Clone)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

/// Runs every named config of `protocol` on the same data.
pub fn study(
    protocol: &[(String, TrainConfig)],
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<StudyTable, TrainError> {
    if let Some((first_name, first)) = protocol.first() {
        for (name, cfg) in &protocol[1..] {
            if cfg.eval != first.eval {
                return Err(TrainError::Invalid(format!(
                    "config `{name}` uses different evaluation settings than `{first_name}`"
                )));
            }
        }
    }
    let mut rows = Vec::with_capacity(protocol.len());
    for (name, config) in protocol {
        let experiment = run_experiment(config, train_set, eval_set).map_err(|e| TrainError::Study {
            name: name.clone(),
            source: Box::new(e),
        })?;
        rows.push(StudyRow {
            name: name.clone(),
            config: config.clone(),
            experiment,
        });
    }
    Ok(StudyTable { rows })
}

fn value_text(cell: &Cell) -> String {
    match (cell.value, cell.unbounded) {
        (Some(v), _) => v.to_string(),
        (None, true) => "inf".into(),
        (None, false) => String::new(),
    }
}

#[derive(Serialize)]
struct RowDoc<'a> {
    name: &'a str,
    config: &'a TrainConfig,
    report: &'a MetricsReport,
}

impl StudyTable {
    pub fn row(&self, name: &str) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Headline comparison: `config,group,metric,prior,value,stderr,count`,
    /// covering MSE, FPR ratio, EO gap and the conditional metrics per prior.
    pub fn write_comparison_csv<W: Write>(&self, writer: W) -> Result<(), MetricError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["config", "group", "metric", "prior", "value", "stderr", "count"])?;
        for row in &self.rows {
            for (k, cell) in row.experiment.aggregate.cells() {
                if k.bin.is_some() {
                    continue;
                }
                wtr.write_record([
                    row.name.clone(),
                    k.group.unwrap_or_default(),
                    k.metric,
                    k.prior.unwrap_or_default(),
                    value_text(cell),
                    cell.stderr.map(|s| s.to_string()).unwrap_or_default(),
                    cell.count.to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(|e| MetricError::Csv(e.into()))?;
        Ok(())
    }

    /// FPR per rating bin for subgroup and background, per group and config.
    pub fn write_per_bin_csv<W: Write>(&self, writer: W) -> Result<(), MetricError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "config",
            "group",
            "bin",
            "lo",
            "hi",
            "fpr_subgroup",
            "stderr_subgroup",
            "fpr_background",
            "stderr_background",
            "gap",
            "stderr_gap",
        ])?;
        let se = |c: &Cell| c.stderr.map(|s| s.to_string()).unwrap_or_default();
        for row in &self.rows {
            for (group, g) in &row.experiment.aggregate.groups {
                for b in &g.per_bin_fpr {
                    wtr.write_record([
                        row.name.clone(),
                        group.clone(),
                        b.bin.to_string(),
                        b.lo.to_string(),
                        b.hi.to_string(),
                        value_text(&b.subgroup),
                        se(&b.subgroup),
                        value_text(&b.background),
                        se(&b.background),
                        value_text(&b.gap),
                        se(&b.gap),
                    ])?;
                }
            }
        }
        wtr.flush().map_err(|e| MetricError::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, MetricError> {
        let docs: Vec<RowDoc> = self
            .rows
            .iter()
            .map(|r| RowDoc {
                name: &r.name,
                config: &r.config,
                report: &r.experiment.aggregate,
            })
            .collect();
        Ok(serde_json::to_string_pretty(&docs)?)
    }
}

/// Parsed protocol file: shared keys (including any `train` / `eval` data
/// paths) and the named configs in file order.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub train: Option<String>,
    pub eval: Option<String>,
    pub configs: Vec<(String, TrainConfig)>,
}

/// Each section's keys are layered over the shared preamble, then
/// `overrides`. Any key no config consumes is an error naming the section.
pub fn parse_protocol(text: &str, overrides: &KeyValues) -> Result<Protocol, TrainError> {
    let (mut shared, sections) = parse_sections(text)?;
    let train = shared.take_str("train");
    let eval = shared.take_str("eval");
    if sections.is_empty() {
        return Err(TrainError::Invalid("protocol defines no [config] sections".into()));
    }
    let mut configs = Vec::with_capacity(sections.len());
    for (name, section) in sections {
        let mut kv = shared.merged_with(&section).merged_with(overrides);
        let wrap = |e: TrainError| TrainError::Study {
            name: name.clone(),
            source: Box::new(e),
        };
        let cfg = TrainConfig::from_kv(&mut kv).map_err(|e| wrap(e.into()))?;
        kv.finish().map_err(|e| wrap(e.into()))?;
        configs.push((name, cfg));
    }
    Ok(Protocol { train, eval, configs })
}

/// The five-step mitigation sequence: linear, mlp1, mlp1 with an adversary on
/// `groups[0]`, mlp1 with a correlation penalty on `groups[0]`, and mlp1 with
/// one penalty per group. Penalty and adversary batches hold `side_batch`
/// negatives.
pub fn default_protocol(
    base: &TrainConfig,
    groups: &[&str],
    lambda: f64,
    adversary_alpha: f64,
    side_batch: usize,
) -> Vec<(String, TrainConfig)> {
    let mlp = TrainConfig {
        architecture: ArchKind::Mlp1,
        penalties: Vec::new(),
        adversary: None,
        ..base.clone()
    };
    let penalty = |g: &str| PenaltySpec {
        group: g.to_string(),
        lambda,
        batch_size: side_batch,
    };
    let mut out = vec![
        (
            "linear".to_string(),
            TrainConfig {
                architecture: ArchKind::Linear,
                ..mlp.clone()
            },
        ),
        ("mlp1".to_string(), mlp.clone()),
    ];
    if let Some(&first) = groups.first() {
        out.push((
            "mlp1_adversary".to_string(),
            TrainConfig {
                adversary: Some(AdversarySpec {
                    group: first.to_string(),
                    alpha: adversary_alpha,
                    learning_rate: mlp.learning_rate,
                    batch_size: side_batch,
                }),
                ..mlp.clone()
            },
        ));
        out.push((
            format!("mlp1_corr_{first}"),
            TrainConfig {
                penalties: vec![penalty(first)],
                ..mlp.clone()
            },
        ));
        out.push((
            "mlp1_corr_all".to_string(),
            TrainConfig {
                penalties: groups.iter().map(|g| penalty(g)).collect(),
                ..mlp
            },
        ));
    }
    out
}
