//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on failure.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use fairgap_core::config::KeyValues;
use fairgap_core::metrics::{
    conditional_table, eo_gap, evaluate_predictions, fpr_ratio, BinSpec, MetricsReport, Prior, Ratio,
};
use fairgap_core::regularization::{adversary_step, corr_penalty_and_grad, pearson_corr, AdversaryHead, PenaltySpec};
use fairgap_core::synthgen::{generate, GenConfig};
use fairgap_core::trainer::{parse_protocol, study, train, StudyTable};
use fairgap_core::{Dataset, EvalSpec, Example, Threshold, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::checks::{worst_errors, FULL_STEP_TOL, PENALTY_TOL};
use common::reference::plain_sgd;
use common::{random_dataset, textbook_pearson};

const PROTOCOL: &str = include_str!("../../../protocols/default.protocol");

/// Values of the default-seed study (generator seed 7, training seeds 0..10),
/// frozen after the first run.
mod pinned {
    pub const LINEAR_GROUP1: f64 = 1.6713765909050184;
    pub const MLP1_GROUP1: f64 = 1.5319965805190137;
    pub const CORR_GROUP1: f64 = 1.1247121562048903;
    pub const TOLERANCE: f64 = 1e-6;

    pub const LINEAR_MIN: f64 = 1.5;
    pub const CORR_MAX: f64 = 1.15;
    pub const MSE_INFLATION_MAX: f64 = 0.10;
    pub const CORR_ALL_GROUP1_MAX: f64 = 1.2;
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, started: Instant, outcome: Outcome) -> bool {
    println!(
        "criterion {id}: {} ({:.1}s) {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        outcome.detail
    );
    outcome.pass
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=256);
        let (p, s) = loop {
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            if s.iter().any(|&b| b) && s.iter().any(|&b| !b) {
                break (p, s);
            }
        };
        let got = pearson_corr(&p, &s).unwrap().corr;
        worst = worst.max((got - textbook_pearson(&p, &s)).abs());
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("max |corr - textbook| = {worst:.2e} over 1000 pairs"),
    }
}

fn criterion_2() -> Outcome {
    let (pen, head, input, step) = worst_errors();
    Outcome {
        pass: pen <= PENALTY_TOL && head <= PENALTY_TOL && input <= PENALTY_TOL && step <= FULL_STEP_TOL,
        detail: format!(
            "worst relative error: penalty {pen:.1e}, head {head:.1e}, input {input:.1e}, full step {step:.1e}"
        ),
    }
}

fn labelled(cells: Vec<(f64, f64, u8)>) -> (Vec<f64>, Dataset) {
    let mut preds = Vec::new();
    let examples = cells
        .into_iter()
        .map(|(p, y, flag)| {
            preds.push(p);
            let mut groups = BTreeMap::new();
            if flag < 2 {
                groups.insert("g".to_string(), flag == 1);
            }
            Example::from_label(vec![p], y, groups).unwrap()
        })
        .collect();
    (preds, Dataset::new(1, 0, vec!["g".into()], examples).unwrap())
}

fn cases() -> impl Strategy<Value = (Vec<(f64, f64, u8)>, usize)> {
    (
        prop::collection::vec((0.0..1.0f64, 0.0..=1.0f64, 0u8..3), 10..300),
        1usize..8,
    )
}

/// Per-bin FPRs counted directly, for the uniform-mean identity.
fn direct_mean_gap(preds: &[f64], ds: &Dataset, tau: Threshold, bins: usize, floor: usize) -> Option<f64> {
    let mut cells = vec![[0usize; 4]; bins];
    for (p, e) in preds.iter().zip(ds.examples()) {
        let (y, Some(f)) = (e.label(), e.group("g")) else {
            continue;
        };
        if y >= tau.value() {
            continue;
        }
        let b = ((bins as f64 * y / tau.value()).floor() as usize).min(bins - 1);
        let side = if f { 0 } else { 2 };
        cells[b][side] += 1;
        cells[b][side + 1] += usize::from(*p >= tau.value());
    }
    let gaps: Vec<f64> = cells
        .iter()
        .filter(|c| c[0] >= floor && c[2] >= floor)
        .map(|c| c[1] as f64 / c[0] as f64 - c[3] as f64 / c[2] as f64)
        .collect();
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

fn criterion_3() -> Outcome {
    let tau = Threshold::new(0.5).unwrap();
    let mut runner = TestRunner::new(PropConfig {
        cases: 256,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let result = runner.run(&cases(), |(cells, floor)| {
        let (preds, ds) = labelled(cells);
        let four = BinSpec::over_negatives(4, tau).unwrap();
        let table = conditional_table(&preds, &ds, "g", tau, &four, floor).unwrap();
        let direct = direct_mean_gap(&preds, &ds, tau, 4, floor);
        match table.eo_gap(&Prior::Uniform) {
            Ok(gap) => prop_assert_eq!(Some(gap.value), direct),
            Err(e) => prop_assert!(e.is_undefined() && direct.is_none()),
        }
        if let Ok(weights) = table.effective_weights(&Prior::Background) {
            let sum: f64 = weights.iter().flatten().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "background weights sum to {}", sum);
        }

        let one = BinSpec::over_negatives(1, tau).unwrap();
        let single = conditional_table(&preds, &ds, "g", tau, &one, 1).unwrap();
        for prior in [Prior::Uniform, Prior::Background, Prior::Subgroup] {
            match (single.eo_gap(&prior), eo_gap(&preds, &ds, "g", tau)) {
                (Ok(c), Ok(u)) => prop_assert!((c.value - u).abs() <= 1e-12),
                (Err(_), Err(_)) => {}
                (c, u) => prop_assert!(false, "B=1 eo_gap disagrees: {:?} vs {:?}", c.map(|g| g.value), u),
            }
            match (
                single.fpr_ratio(&prior),
                fpr_ratio(&preds, &ds, "g", tau).map(|r| r.ratio),
            ) {
                (Ok(Ratio::Finite(c)), Ok(Ratio::Finite(u))) => prop_assert!((c - u).abs() <= 1e-12 * u.max(1.0)),
                (Ok(Ratio::Unbounded { .. }), Ok(Ratio::Unbounded { .. })) | (Err(_), Err(_)) => {}
                (c, u) => prop_assert!(false, "B=1 fpr_ratio disagrees: {:?} vs {:?}", c, u),
            }
        }
        Ok(())
    });
    Outcome {
        pass: result.is_ok(),
        detail: match result {
            Ok(()) => "256 generated datasets: uniform gap exact, B=1 within 1e-12, weights sum to 1".into(),
            Err(e) => e.to_string(),
        },
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = random_dataset(&mut rng, 400, 5);
    let base = TrainConfig {
        hidden: 16,
        epochs: 5,
        batch_size: 32,
        learning_rate: 0.1,
        seed: 11,
        ..TrainConfig::default()
    };
    let zero = TrainConfig {
        penalties: vec![PenaltySpec {
            group: "g1".into(),
            lambda: 0.0,
            batch_size: 32,
        }],
        ..base.clone()
    };
    let got = train(&zero, &ds, &ds).unwrap();
    let (want, history) = plain_sgd(&zero, &ds);
    let drift = got
        .params
        .values()
        .iter()
        .zip(&want)
        .chain(got.mse_history.iter().zip(&history))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let again = train(&zero, &ds, &ds).unwrap();
    let identical = again.params.values() == got.params.values()
        && again.report.to_json().unwrap() == got.report.to_json().unwrap()
        && again.mse_history == got.mse_history;
    Outcome {
        pass: drift <= 1e-12 && identical,
        detail: format!("max deviation from plain SGD {drift:.1e}; repeat run bit-identical: {identical}"),
    }
}

fn uniform_ratio(report: &MetricsReport, group: &str) -> f64 {
    report.groups[group].conditional["uniform"]
        .fpr_ratio
        .value
        .expect("defined ratio")
}

fn run_study() -> (StudyTable, String) {
    let data = generate(&GenConfig::default()).unwrap();
    let eval_fraction = GenConfig::default().eval_fraction;
    let (tr, ev) = data.split_at_fraction(1.0 - eval_fraction);
    let protocol = parse_protocol(PROTOCOL, &KeyValues::default()).unwrap();
    let table = study(&protocol.configs, &tr, &ev).unwrap();
    let names = protocol
        .configs
        .iter()
        .map(|(n, _)| n.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    (table, names)
}

fn criterion_5(table: &StudyTable) -> Outcome {
    let agg = |name: &str| &table.row(name).expect("protocol row").experiment.aggregate;
    let linear = uniform_ratio(agg("linear"), "group1");
    let mlp = uniform_ratio(agg("mlp1"), "group1");
    let corr = uniform_ratio(agg("mlp1_corr_group1"), "group1");
    let all1 = uniform_ratio(agg("mlp1_corr_all"), "group1");
    let single2 = uniform_ratio(agg("mlp1_corr_group1"), "group2");
    let all2 = uniform_ratio(agg("mlp1_corr_all"), "group2");
    let mse = |name: &str| agg(name).mse.value.unwrap();
    let inflation = mse("mlp1_corr_group1") / mse("mlp1") - 1.0;

    let pinned_ok = [
        (linear, pinned::LINEAR_GROUP1),
        (mlp, pinned::MLP1_GROUP1),
        (corr, pinned::CORR_GROUP1),
    ]
    .iter()
    .all(|(got, want)| (got - want).abs() <= pinned::TOLERANCE);
    let a = linear >= pinned::LINEAR_MIN;
    let b = mlp < linear;
    let c = corr <= pinned::CORR_MAX && inflation <= pinned::MSE_INFLATION_MAX;
    let d = all2 < single2 && all1 <= pinned::CORR_ALL_GROUP1_MAX;
    Outcome {
        pass: a && b && c && d && pinned_ok,
        detail: format!(
            "(a) linear {linear:.4} [{a}] (b) mlp1 {mlp:.4} [{b}] (c) corr {corr:.4}, mse +{:.1}% [{c}] \
             (d) group2 {single2:.4} -> {all2:.4}, group1 {all1:.4} [{d}] pinned [{pinned_ok}]",
            inflation * 100.0
        ),
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn per_run_ratios(table: &StudyTable, name: &str) -> Vec<f64> {
    table
        .row(name)
        .unwrap()
        .experiment
        .per_run(|r| {
            r.groups
                .get("group1")
                .and_then(|g| g.conditional.get("uniform"))
                .map(|c| &c.fpr_ratio)
        })
        .into_iter()
        .map(|v| v.expect("defined per-run ratio"))
        .collect()
}

fn criterion_6(table: &StudyTable) -> Outcome {
    let (corr_mean, corr_sd) = mean_sd(&per_run_ratios(table, "mlp1_corr_group1"));
    let (adv_mean, adv_sd) = mean_sd(&per_run_ratios(table, "mlp1_adversary"));
    let hard = corr_sd <= 0.5 * (corr_mean - 1.0);
    Outcome {
        pass: hard,
        detail: format!(
            "corr-reg sd {corr_sd:.4} <= 0.5 x {:.4} [{hard}]; report: adversary mean {adv_mean:.4} sd {adv_sd:.4} \
             vs corr-reg mean {corr_mean:.4} sd {corr_sd:.4}, corr-reg sd lower: {}",
            corr_mean - 1.0,
            corr_sd <= adv_sd
        ),
    }
}

fn criterion_7(table: &StudyTable) -> Outcome {
    let bins = |name: &str| {
        table.row(name).unwrap().experiment.aggregate.groups["group1"]
            .per_bin_fpr
            .clone()
    };
    let mlp = bins("mlp1");
    let corr = bins("mlp1_corr_group1");
    let background: Vec<f64> = mlp.iter().map(|b| b.background.value.unwrap()).collect();
    let monotone = background.windows(2).all(|w| w[0] <= w[1]);
    let gap =
        |rows: &[fairgap_core::metrics::BinRow]| -> Vec<f64> { rows.iter().map(|b| b.gap.value.unwrap()).collect() };
    let (before, after) = (gap(&mlp), gap(&corr));
    let shrinks = before.iter().zip(&after).all(|(b, a)| a.abs() < b.abs());
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    Outcome {
        pass: monotone && shrinks,
        detail: format!(
            "background FPR [{}] non-decreasing [{monotone}]; gap [{}] -> [{}] shrinks [{shrinks}]",
            fmt(&background),
            fmt(&before),
            fmt(&after)
        ),
    }
}

fn finite_report(r: &MetricsReport) -> bool {
    r.cells()
        .iter()
        .all(|(_, c)| c.value.is_none_or(f64::is_finite) && c.stderr.is_none_or(f64::is_finite))
}

/// One degenerate case; `Err` describes a NaN, an infinity or a panic-free
/// but wrong outcome.
fn degenerate_case(kind: usize, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let tau = Threshold::new(0.5).unwrap();
    let lambda = rng.random_range(0.0..2.0);
    let zero_penalty = |p: &[f64], s: &[bool]| -> Result<(), String> {
        let pen = corr_penalty_and_grad(p, s, lambda).map_err(|e| format!("unexpected error {e}"))?;
        if pen.value != 0.0 || pen.grad.iter().any(|&g| g != 0.0) {
            return Err(format!("non-zero penalty {} on a degenerate batch", pen.value));
        }
        Ok(())
    };
    let dataset = |labels: (f64, f64), member: Option<bool>, rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..60);
        let cells = (0..n)
            .map(|_| {
                let flag = match member {
                    Some(f) => u8::from(f),
                    None => rng.random_range(0..3),
                };
                (rng.random_range(0.0..1.0), rng.random_range(labels.0..=labels.1), flag)
            })
            .collect();
        labelled(cells)
    };
    let penalised = TrainConfig {
        hidden: 2,
        epochs: 1,
        penalties: vec![PenaltySpec {
            group: "g".into(),
            lambda: 0.5,
            batch_size: 2,
        }],
        ..TrainConfig::default()
    };
    match kind {
        0 => {
            let n = rng.random_range(2..64);
            let c = rng.random_range(-1.0..2.0);
            let jitter = if rng.random_bool(0.5) { 1e-12 } else { 0.0 };
            let p: Vec<f64> = (0..n).map(|i| c + jitter * (i % 2) as f64).collect();
            let s: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            zero_penalty(&p, &s)
        }
        1 => {
            let n = rng.random_range(2..64);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let flag = rng.random_bool(0.5);
            zero_penalty(&p, &vec![flag; n])
        }
        2 => {
            let n = rng.random_range(0..2);
            match corr_penalty_and_grad(&vec![0.3; n], &vec![true; n], lambda) {
                Err(_) => Ok(()),
                Ok(p) => Err(format!("batch of {n} accepted with penalty {}", p.value)),
            }
        }
        3 | 4 => {
            let (preds, ds) = if kind == 3 {
                dataset((0.5, 1.0), None, rng)
            } else {
                dataset((0.0, 1.0), Some(rng.random_bool(0.5)), rng)
            };
            if fpr_ratio(&preds, &ds, "g", tau).is_ok() || eo_gap(&preds, &ds, "g", tau).is_ok() {
                return Err("group metric defined without both sides".into());
            }
            let report = evaluate_predictions(&preds, &ds, &EvalSpec::new(tau)).map_err(|e| e.to_string())?;
            if !finite_report(&report) {
                return Err("non-finite report cell".into());
            }
            match train(&penalised, &ds, &ds) {
                Err(_) => Ok(()),
                Ok(_) => Err("penalty trained without usable negatives".into()),
            }
        }
        5 => {
            let (preds, ds) = dataset((0.0, 1.0), None, rng);
            let spec = EvalSpec {
                min_cell_count: ds.len() + 1,
                ..EvalSpec::new(tau)
            };
            let table = conditional_table(&preds, &ds, "g", tau, &spec.bins, spec.min_cell_count).unwrap();
            for prior in [Prior::Uniform, Prior::Background, Prior::Subgroup] {
                if table.eo_gap(&prior).is_ok() || table.fpr_ratio(&prior).is_ok() {
                    return Err("conditional metric defined with every bin dropped".into());
                }
            }
            let report = evaluate_predictions(&preds, &ds, &spec).map_err(|e| e.to_string())?;
            if !finite_report(&report)
                || report.groups["g"]
                    .conditional
                    .values()
                    .any(|c| c.eo_gap.value.is_some())
            {
                return Err("all-dropped bins reported a value".into());
            }
            Ok(())
        }
        _ => {
            let width = rng.random_range(1..8);
            let head = AdversaryHead {
                weights: vec![rng.random_range(-1.0..1.0); width],
                bias: 0.0,
            };
            let step = adversary_step(&[], &[], &head, 1.0).map_err(|e| e.to_string())?;
            let all_finite = step.loss.is_finite() && step.head_grad_weights.iter().all(|g| g.is_finite());
            if !all_finite || step.loss != 0.0 {
                return Err("empty adversary batch gave a non-zero or non-finite step".into());
            }
            Ok(())
        }
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    for case in 0..500 {
        if let Err(e) = degenerate_case(case % 7, &mut rng) {
            failures.push(format!("case {case}: {e}"));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "500 degenerate cases: defined errors or zero penalties, no NaN/Inf".into()
        } else {
            format!("{} failures, first: {}", failures.len(), failures[0])
        },
    }
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    all &= report("1", t, criterion_1());
    let t = Instant::now();
    all &= report("2", t, criterion_2());
    let t = Instant::now();
    all &= report("3", t, criterion_3());
    let t = Instant::now();
    all &= report("4", t, criterion_4());
    let t = Instant::now();
    all &= report("8", t, criterion_8());

    let t = Instant::now();
    let (table, names) = run_study();
    println!("study [{names}] finished in {:.0}s", t.elapsed().as_secs_f64());
    all &= report("5", t, criterion_5(&table));
    all &= report("6", t, criterion_6(&table));
    all &= report("7", t, criterion_7(&table));

    if !all {
        std::process::exit(1);
    }
}
