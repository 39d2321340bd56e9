//! `fairgap`: generate synthetic data, train and evaluate regressors, run
//! mitigation studies and render reports.

mod report;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fairgap_core::config::KeyValues;
use fairgap_core::dataset::{load_dataset, save_dataset, Dataset, Format};
use fairgap_core::metrics::{EvalSpec, MetricsReport};
use fairgap_core::model::ModelParams;
use fairgap_core::synthgen::{describe, generate, GenConfig};
use fairgap_core::trainer::{evaluate, parse_protocol, run_experiment, study, TrainConfig};

#[derive(Parser)]
#[command(name = "fairgap", version, about = "Group FPR gap metrics and mitigation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Override a config key, e.g. `--set seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with train/eval splits and a distribution summary.
    Generate {
        /// Generator config (`key = value` lines). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train `runs` seeds of one configuration and evaluate each.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate saved parameters on a dataset.
    Evaluate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        /// Report path; `.csv` writes the tidy cell table, anything else JSON.
        #[arg(long)]
        out: PathBuf,
        /// Config supplying `tau` and `eval.*` keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every configuration of a protocol file on shared data.
    Study {
        #[arg(long)]
        protocol: PathBuf,
        /// Training data; overrides the protocol's `train` key.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Evaluation data; overrides the protocol's `eval` key.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize metrics reports side by side and write per-bin plot data.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Directory for `per_bin_fpr.csv`; defaults to the first report's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, out, overrides } => cmd_generate(config.as_deref(), &out, &overrides.set),
        Command::Train {
            config,
            train,
            eval,
            out,
            overrides,
        } => cmd_train(config.as_deref(), &train, &eval, &out, &overrides.set),
        Command::Evaluate {
            params,
            eval,
            out,
            config,
            overrides,
        } => cmd_evaluate(&params, &eval, &out, config.as_deref(), &overrides.set),
        Command::Study {
            protocol,
            train,
            eval,
            out,
            overrides,
        } => cmd_study(&protocol, train.as_deref(), eval.as_deref(), &out, &overrides.set),
        Command::Report { reports, out } => cmd_report(&reports, out.as_deref()),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn key_values(config: Option<&Path>, set: &[String]) -> Result<KeyValues> {
    let mut kv = match config {
        Some(path) => KeyValues::parse(&read_text(path)?).with_context(|| format!("in {}", path.display()))?,
        None => KeyValues::default(),
    };
    for s in set {
        kv.set_override(s).with_context(|| format!("bad --set `{s}`"))?;
    }
    Ok(kv)
}

fn overrides(set: &[String]) -> Result<KeyValues> {
    key_values(None, set)
}

fn load(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        bail!("dataset not found: {}", path.display());
    }
    load_dataset(path, Format::from_path(path)).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    save_dataset(dataset, path, Format::from_path(path)).with_context(|| format!("cannot write {}", path.display()))
}

fn write_report(report: &MetricsReport, dir: &Path, stem: &str) -> Result<()> {
    write_text(&dir.join(format!("{stem}.json")), &report.to_json()?)?;
    let mut w = create(&dir.join(format!("{stem}.csv")))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_generate(config: Option<&Path>, out: &Path, set: &[String]) -> Result<()> {
    let mut kv = key_values(config, set)?;
    let gen = GenConfig::from_kv(&mut kv)?;
    kv.finish()?;
    let dataset = generate(&gen)?;
    let (train, eval) = dataset.split_at_fraction(1.0 - gen.eval_fraction);

    create_dir(out)?;
    write_text(&out.join("generator.conf"), &gen.to_kv_text())?;
    save(&dataset, &out.join("dataset.csv"))?;
    save(&train, &out.join("train.csv"))?;
    save(&eval, &out.join("eval.csv"))?;

    let summary = describe(&dataset, gen.tau, &EvalSpec::new(gen.tau).bins)?;
    let mut w = create(&out.join("describe.csv"))?;
    summary.write_csv(&mut w)?;
    w.flush()?;

    println!(
        "generated {} examples ({} train, {} eval) into {}",
        dataset.len(),
        train.len(),
        eval.len(),
        out.display()
    );
    for row in &summary.rows {
        let mass = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        println!(
            "  {}: {} members, {} negatives, top-bin negative mass {} vs background {}",
            row.group,
            row.subgroup.examples,
            row.subgroup.negatives,
            mass(row.subgroup.top_bin_mass()),
            mass(row.background.top_bin_mass())
        );
    }
    Ok(())
}

fn cmd_train(config: Option<&Path>, train: &Path, eval: &Path, out: &Path, set: &[String]) -> Result<()> {
    let mut kv = key_values(config, set)?;
    let cfg = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    let train_set = load(train)?;
    let eval_set = load(eval)?;
    let experiment = run_experiment(&cfg, &train_set, &eval_set)?;

    create_dir(out)?;
    write_text(&out.join("train.conf"), &cfg.to_kv_text())?;
    write_report(&experiment.aggregate, out, "report")?;
    let mut hist = csv::Writer::from_writer(create(&out.join("history.csv"))?);
    hist.write_record(["seed", "epoch", "train_mse", "penalty", "adversary_loss"])?;
    for (k, run) in experiment.runs.iter().enumerate() {
        let seed = cfg.seed + k as u64;
        let params = run.params.to_json()?;
        write_text(&out.join(format!("params_seed{seed}.json")), &params)?;
        write_report(&run.report, out, &format!("report_seed{seed}"))?;
        hist.write_record([
            seed.to_string(),
            "0".into(),
            run.initial_mse.to_string(),
            String::new(),
            String::new(),
        ])?;
        for (e, mse) in run.mse_history.iter().enumerate() {
            let penalty: f64 = run.penalty_history.get(e).map_or(0.0, |p| p.iter().sum());
            let adv = run.adversary_history.get(e).map(|a| a.to_string()).unwrap_or_default();
            hist.write_record([
                seed.to_string(),
                (e + 1).to_string(),
                mse.to_string(),
                penalty.to_string(),
                adv,
            ])?;
        }
    }
    hist.flush()?;
    println!("{}", report::render(&[("report".to_string(), &experiment.aggregate)]));
    Ok(())
}

fn cmd_evaluate(params: &Path, eval: &Path, out: &Path, config: Option<&Path>, set: &[String]) -> Result<()> {
    let mut kv = key_values(config, set)?;
    let cfg = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    let model = ModelParams::from_json(&read_text(params)?).with_context(|| format!("in {}", params.display()))?;
    let eval_set = load(eval)?;
    let report = evaluate(&model, &eval_set, &cfg.eval)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut w = create(out)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    } else {
        write_text(out, &report.to_json()?)?;
    }
    println!("{}", report::render(&[(params.display().to_string(), &report)]));
    Ok(())
}

fn cmd_study(protocol: &Path, train: Option<&Path>, eval: Option<&Path>, out: &Path, set: &[String]) -> Result<()> {
    let parsed = parse_protocol(&read_text(protocol)?, &overrides(set)?)
        .with_context(|| format!("in protocol {}", protocol.display()))?;
    let base = protocol.parent().unwrap_or(Path::new(""));
    let resolve = |flag: Option<&Path>, key: &Option<String>, name: &str| -> Result<PathBuf> {
        match (flag, key) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(k)) => Ok(base.join(k)),
            (None, None) => bail!("no {name} dataset: pass --{name} or set `{name} = path` in the protocol"),
        }
    };
    let train_set = load(&resolve(train, &parsed.train, "train")?)?;
    let eval_set = load(&resolve(eval, &parsed.eval, "eval")?)?;
    let table = study(&parsed.configs, &train_set, &eval_set)?;

    create_dir(out)?;
    let mut w = create(&out.join("comparison.csv"))?;
    table.write_comparison_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("per_bin_fpr.csv"))?;
    table.write_per_bin_csv(&mut w)?;
    w.flush()?;
    write_text(&out.join("study.json"), &table.to_json()?)?;
    let reports = out.join("reports");
    create_dir(&reports)?;
    for row in &table.rows {
        write_report(&row.experiment.aggregate, &reports, &row.name)?;
    }
    let pairs: Vec<(String, &MetricsReport)> = table
        .rows
        .iter()
        .map(|r| (r.name.clone(), &r.experiment.aggregate))
        .collect();
    println!("{}", report::render(&pairs));
    Ok(())
}

fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let r =
            MetricsReport::from_json(&read_text(p)?).with_context(|| format!("malformed report {}", p.display()))?;
        let label = p
            .file_stem()
            .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        reports.push((label, r));
    }
    let pairs: Vec<(String, &MetricsReport)> = reports.iter().map(|(l, r)| (l.clone(), r)).collect();
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    writeln!(lock, "{}", report::render(&pairs))?;

    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => paths[0].parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        create_dir(&dir)?;
    }
    let path = dir.join("per_bin_fpr.csv");
    let mut w = create(&path)?;
    report::write_per_bin(&pairs, &mut w)?;
    w.flush()?;
    writeln!(lock, "per-bin series written to {}", path.display())?;
    Ok(())
}
