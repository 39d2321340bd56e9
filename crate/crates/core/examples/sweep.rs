//! Runs the default five-config study on a generated dataset and sweeps the
//! correlation penalty weight.
//!
//! Usage: `cargo run --release -p fairgap-core --example sweep -- [gen.key=value ...]
//! [train.key=value ...] [runs=N] [lambdas=a,b,c] [alpha=A] [side=N] [sweep_only]
//! [dump=path]`
//!
//! With `sweep_only` the five-config table is skipped and every listed lambda
//! is run, MSE inflation measured against the first.

use std::time::Instant;

use fairgap_core::config::KeyValues;
use fairgap_core::dataset::{save_dataset, Format};
use fairgap_core::metrics::MetricsReport;
use fairgap_core::synthgen::{generate, GenConfig};
use fairgap_core::trainer::{default_protocol, run_experiment, TrainConfig};

fn ratio(r: &MetricsReport, group: &str) -> (f64, f64) {
    let c = &r.groups[group].conditional["uniform"].fpr_ratio;
    (c.value.unwrap_or(f64::NAN), c.stderr.unwrap_or(0.0))
}

fn main() {
    let mut gen_kv = KeyValues::default();
    let mut train_kv = KeyValues::default();
    let mut runs = 10usize;
    let mut lambdas: Vec<f64> = Vec::new();
    let mut alpha = 1.0;
    let mut side = 128usize;
    let mut dump: Option<String> = None;
    let mut sweep_only = false;
    for arg in std::env::args().skip(1) {
        if let Some(rest) = arg.strip_prefix("gen.") {
            gen_kv.set_override(rest).expect("gen override");
        } else if let Some(rest) = arg.strip_prefix("train.") {
            train_kv.set_override(rest).expect("train override");
        } else if let Some(v) = arg.strip_prefix("runs=") {
            runs = v.parse().expect("runs");
        } else if let Some(v) = arg.strip_prefix("alpha=") {
            alpha = v.parse().expect("alpha");
        } else if let Some(v) = arg.strip_prefix("side=") {
            side = v.parse().expect("side");
        } else if arg == "sweep_only" {
            sweep_only = true;
        } else if let Some(v) = arg.strip_prefix("dump=") {
            dump = Some(v.to_string());
        } else if let Some(v) = arg.strip_prefix("lambdas=") {
            lambdas = v.split(',').map(|s| s.parse().expect("lambda")).collect();
        } else {
            panic!("unknown argument `{arg}`");
        }
    }
    let gen = GenConfig::from_kv(&mut gen_kv).expect("generator config");
    gen_kv.finish().expect("generator keys");
    let mut base = TrainConfig::from_kv(&mut train_kv).expect("train config");
    train_kv.finish().expect("train keys");
    base.runs = runs;

    let ds = generate(&gen).expect("generate");
    if let Some(path) = dump {
        let path = std::path::Path::new(&path);
        save_dataset(&ds, path, Format::from_path(path)).expect("dump");
        return;
    }
    let (train, eval) = ds.split_at_fraction(1.0 - gen.eval_fraction);
    let groups: Vec<&str> = gen.groups.iter().map(|g| g.name.as_str()).collect();

    let start = Instant::now();
    if sweep_only {
        let mut first_mse = None;
        for &lambda in &lambdas {
            let protocol = default_protocol(&base, &groups, lambda, alpha, side);
            let e = run_experiment(&protocol[3].1, &train, &eval).expect("experiment");
            let mse = e.aggregate.mse.value.unwrap_or(f64::NAN);
            let base_mse = *first_mse.get_or_insert(mse);
            let mut line = format!(
                "lambda {lambda:>6}  mse {mse:.5} ({:+.1}%)",
                100.0 * (mse / base_mse - 1.0)
            );
            for g in &groups {
                let (v, se) = ratio(&e.aggregate, g);
                line += &format!("  {g}: cond {v:.3}±{se:.3}");
            }
            println!("{line}");
        }
        println!("total {:.1}s", start.elapsed().as_secs_f64());
        return;
    }
    let lambda0 = lambdas.first().copied().unwrap_or(1.0);
    for (name, cfg) in default_protocol(&base, &groups, lambda0, alpha, side) {
        let t = Instant::now();
        let e = run_experiment(&cfg, &train, &eval).expect("experiment");
        let a = &e.aggregate;
        let mut line = format!("{name:>18}  mse {:.5}", a.mse.value.unwrap_or(f64::NAN));
        for g in &groups {
            let (v, se) = ratio(a, g);
            let raw = a.groups[*g].fpr_ratio.value.unwrap_or(f64::NAN);
            line += &format!("  {g}: cond {v:.3}±{se:.3} raw {raw:.3}");
        }
        let sd: Vec<f64> = e
            .per_run(|r| Some(&r.groups[groups[0]].conditional["uniform"].fpr_ratio))
            .into_iter()
            .flatten()
            .collect();
        let m = sd.iter().sum::<f64>() / sd.len() as f64;
        let s = (sd.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (sd.len().max(2) - 1) as f64).sqrt();
        line += &format!("  sd1 {s:.3}  [{:.1}s]", t.elapsed().as_secs_f64());
        println!("{line}");
        if name == "mlp1" || name == format!("mlp1_corr_{}", groups[0]) {
            for g in &groups {
                let bins: Vec<String> = a.groups[*g]
                    .per_bin_fpr
                    .iter()
                    .map(|b| {
                        format!(
                            "{:.3}/{:.3}(n{}/{})",
                            b.subgroup.value.unwrap_or(f64::NAN),
                            b.background.value.unwrap_or(f64::NAN),
                            b.subgroup.count,
                            b.background.count
                        )
                    })
                    .collect();
                println!("{:>18}  {g} bins {}", "", bins.join(" "));
            }
        }
    }
    for &lambda in lambdas.iter().skip(1) {
        let protocol = default_protocol(&base, &groups, lambda, alpha, side);
        let cfg = &protocol[3].1;
        let e = run_experiment(cfg, &train, &eval).expect("experiment");
        let (v, se) = ratio(&e.aggregate, groups[0]);
        println!(
            "lambda {lambda:>6}: {} cond {v:.3}±{se:.3} mse {:.5}",
            groups[0],
            e.aggregate.mse.value.unwrap_or(f64::NAN)
        );
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
}
