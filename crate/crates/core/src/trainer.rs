//! Minibatch SGD on squared error plus per-group absolute-correlation
//! penalties on negatives, with an optional gradient-reversal adversary.

mod experiment;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{invalid, ConfigError, KeyValues};
use crate::dataset::{negatives, DataError, Dataset, Threshold};
use crate::metrics::{evaluate_predictions, BinSpec, EvalSpec, MetricError, MetricsReport, Prior};
use crate::model::{self, Architecture, Gradient, ModelError, ModelParams};
use crate::regularization::{
    adversary_step, corr_penalty_and_grad, AdversaryHead, AdversarySpec, AdversaryStep, PenaltySpec,
    RegularizationError,
};

pub use experiment::{
    default_protocol, parse_protocol, run_experiment, study, Experiment, Protocol, StudyRow, StudyTable,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Regularization(#[from] RegularizationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite objective {value} at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize, value: f64 },
    #[error("run with seed {seed} failed: {source}")]
    Run {
        seed: u64,
        #[source]
        source: Box<TrainError>,
    },
    #[error("config `{name}` failed: {source}")]
    Study {
        name: String,
        #[source]
        source: Box<TrainError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Linear,
    Mlp1,
}

impl std::str::FromStr for ArchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(ArchKind::Linear),
            "mlp1" => Ok(ArchKind::Mlp1),
            other => Err(format!("expected `linear` or `mlp1`, got `{other}`")),
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_PENALTY_BATCH_SIZE: usize = 128;
pub const DEFAULT_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: ArchKind,
    /// Hidden width for `mlp1`.
    pub hidden: usize,
    pub tau: Threshold,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub penalties: Vec<PenaltySpec>,
    pub adversary: Option<AdversarySpec>,
    pub seed: u64,
    pub eval: EvalSpec,
    pub runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let tau = Threshold::new(0.5).expect("valid");
        Self {
            architecture: ArchKind::Mlp1,
            hidden: DEFAULT_HIDDEN,
            tau,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            penalties: Vec::new(),
            adversary: None,
            seed: 0,
            eval: EvalSpec::new(tau),
            runs: DEFAULT_RUNS,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self, input_dim: usize) -> Architecture {
        match self.architecture {
            ArchKind::Linear => Architecture::Linear { input_dim },
            ArchKind::Mlp1 => Architecture::Mlp1 {
                input_dim,
                hidden: self.hidden,
            },
        }
    }

    /// Reads training keys on top of the defaults:
    ///
    /// `architecture`, `hidden`, `tau`, `epochs`, `learning_rate`,
    /// `batch_size`, `seed`, `runs`, `penalty.<group> = lambda`,
    /// `penalty_batch_size`, `adversary.group`, `adversary.alpha`,
    /// `adversary.learning_rate`, `adversary.batch_size`, `eval.bins`,
    /// `eval.priors` (comma separated; explicit weights joined by `:`),
    /// `eval.min_cell_count`, `eval.calibration_bins`.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self, ConfigError> {
        let mut c = TrainConfig::default();
        macro_rules! field {
            ($key:literal, $slot:expr) => {
                if let Some(v) = kv.take($key)? {
                    $slot = v;
                }
            };
        }
        if let Some(a) = kv.take_str("architecture") {
            c.architecture = a.parse().map_err(|e: String| invalid("architecture", &a, e))?;
        }
        field!("hidden", c.hidden);
        if let Some(t) = kv.take::<f64>("tau")? {
            c.tau = Threshold::new(t).map_err(|e| invalid("tau", t, e.to_string()))?;
        }
        field!("epochs", c.epochs);
        field!("learning_rate", c.learning_rate);
        field!("batch_size", c.batch_size);
        field!("seed", c.seed);
        field!("runs", c.runs);

        let penalty_batch: usize = kv.take("penalty_batch_size")?.unwrap_or(DEFAULT_PENALTY_BATCH_SIZE);
        for (group, value) in kv.take_prefixed("penalty.") {
            let key = format!("penalty.{group}");
            let lambda: f64 = value
                .parse()
                .map_err(|_| invalid(&key, &value, "lambda is not a number"))?;
            c.penalties.push(PenaltySpec {
                group,
                lambda,
                batch_size: penalty_batch,
            });
        }

        let adv_group = kv.take_str("adversary.group");
        let alpha: Option<f64> = kv.take("adversary.alpha")?;
        let adv_lr: Option<f64> = kv.take("adversary.learning_rate")?;
        let adv_batch: Option<usize> = kv.take("adversary.batch_size")?;
        match adv_group {
            Some(group) => {
                c.adversary = Some(AdversarySpec {
                    group,
                    alpha: alpha.unwrap_or(1.0),
                    learning_rate: adv_lr.unwrap_or(c.learning_rate),
                    batch_size: adv_batch.unwrap_or(DEFAULT_PENALTY_BATCH_SIZE),
                })
            }
            None if alpha.is_some() || adv_lr.is_some() || adv_batch.is_some() => {
                return Err(ConfigError::Missing("adversary.group".into()))
            }
            None => {}
        }

        c.eval = EvalSpec::new(c.tau);
        if let Some(b) = kv.take::<usize>("eval.bins")? {
            c.eval.bins = BinSpec::over_negatives(b, c.tau).map_err(|e| invalid("eval.bins", b, e.to_string()))?;
        }
        if let Some(b) = kv.take::<usize>("eval.calibration_bins")? {
            c.eval.calibration_bins =
                BinSpec::new(b, 0.0, 1.0).map_err(|e| invalid("eval.calibration_bins", b, e.to_string()))?;
        }
        field!("eval.min_cell_count", c.eval.min_cell_count);
        if let Some(p) = kv.take_str("eval.priors") {
            c.eval.priors = p
                .split(',')
                .map(|s| Prior::parse(s).map_err(|e| invalid("eval.priors", &p, e.to_string())))
                .collect::<Result<_, _>>()?;
        }
        Ok(c)
    }

    /// Key-value text reproducing this config.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        let arch = match self.architecture {
            ArchKind::Linear => "linear",
            ArchKind::Mlp1 => "mlp1",
        };
        line("architecture", arch.into());
        line("hidden", self.hidden.to_string());
        line("tau", self.tau.to_string());
        line("epochs", self.epochs.to_string());
        line("learning_rate", self.learning_rate.to_string());
        line("batch_size", self.batch_size.to_string());
        line("seed", self.seed.to_string());
        line("runs", self.runs.to_string());
        if let Some(p) = self.penalties.first() {
            line("penalty_batch_size", p.batch_size.to_string());
        }
        for p in &self.penalties {
            line(&format!("penalty.{}", p.group), p.lambda.to_string());
        }
        if let Some(a) = &self.adversary {
            line("adversary.group", a.group.clone());
            line("adversary.alpha", a.alpha.to_string());
            line("adversary.learning_rate", a.learning_rate.to_string());
            line("adversary.batch_size", a.batch_size.to_string());
        }
        line("eval.bins", self.eval.bins.count().to_string());
        line("eval.calibration_bins", self.eval.calibration_bins.count().to_string());
        line("eval.min_cell_count", self.eval.min_cell_count.to_string());
        let priors: Vec<String> = self
            .eval
            .priors
            .iter()
            .map(|p| match p {
                Prior::Explicit(w) => w.iter().map(f64::to_string).collect::<Vec<_>>().join(":"),
                other => other.name().to_string(),
            })
            .collect();
        line("eval.priors", priors.join(","));
        s
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Invalid(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.runs == 0 {
            return bad("runs must be >= 1".into());
        }
        if self.architecture == ArchKind::Mlp1 && self.hidden == 0 {
            return bad("hidden must be >= 1 for mlp1".into());
        }
        if self.eval.tau != self.tau {
            return bad(format!(
                "eval tau {} differs from training tau {}",
                self.eval.tau, self.tau
            ));
        }
        for (i, p) in self.penalties.iter().enumerate() {
            p.validate()?;
            if self.penalties[..i].iter().any(|q| q.group == p.group) {
                return bad(format!("group `{}` is penalized twice", p.group));
            }
        }
        if let Some(a) = &self.adversary {
            a.validate()?;
            if self.architecture != ArchKind::Mlp1 {
                return bad("the adversary reads a hidden layer and needs architecture = mlp1".into());
            }
        }
        Ok(())
    }
}

// Each consumer of randomness reads its own ChaCha stream of the run seed, so
// enabling a penalty or the adversary never perturbs the main batch order.
// Stream 0 belongs to parameter initialisation.
const SHUFFLE_STREAM: u64 = 1;
const ADVERSARY_STREAM: u64 = 2;
const PENALTY_STREAM_BASE: u64 = 16;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Known-demographic negatives of one group, with their flags.
#[derive(Debug, Clone)]
pub struct GroupPool {
    pub group: String,
    pub indices: Vec<usize>,
    pub flags: Vec<bool>,
}

impl GroupPool {
    pub fn build(dataset: &Dataset, tau: Threshold, group: &str) -> Result<Self, TrainError> {
        if !dataset.has_group(group) {
            return Err(DataError::UnknownGroup {
                name: group.to_string(),
                available: dataset.group_names().join(", "),
            }
            .into());
        }
        let neg = negatives(dataset, tau);
        let mut indices = Vec::new();
        let mut flags = Vec::new();
        for &i in neg.indices() {
            if let Some(f) = dataset.examples()[i].group(group) {
                indices.push(i);
                flags.push(f);
            }
        }
        Ok(Self {
            group: group.to_string(),
            indices,
            flags,
        })
    }

    fn require(&self, need: usize, what: &str) -> Result<(), TrainError> {
        if self.indices.len() < need {
            return Err(TrainError::Invalid(format!(
                "{what} for `{}` needs {need} known negatives, training set has {}",
                self.group,
                self.indices.len()
            )));
        }
        if !(self.flags.iter().any(|&f| f) && self.flags.iter().any(|&f| !f)) {
            return Err(TrainError::Invalid(format!(
                "{what} for `{}` needs negatives both in and out of the group",
                self.group
            )));
        }
        Ok(())
    }

    /// `size` positions into the pool, uniformly with replacement.
    fn draw(&self, rng: &mut ChaCha8Rng, size: usize) -> Vec<usize> {
        (0..size).map(|_| rng.random_range(0..self.indices.len())).collect()
    }
}

/// Example indices feeding one SGD step. Penalty and adversary entries are
/// `(dataset index, group flag)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepBatches {
    pub main: Vec<usize>,
    /// One batch per entry of `TrainConfig::penalties`; empty when skipped.
    pub penalties: Vec<Vec<(usize, bool)>>,
    pub adversary: Vec<(usize, bool)>,
}

/// Value of each term of the step objective at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTerms {
    pub mse: f64,
    /// `lambda * |corr|` per penalty.
    pub penalties: Vec<f64>,
    /// Adversary head log-loss, when present.
    pub adversary: Option<f64>,
}

impl StepTerms {
    /// `mse + sum(penalties) - alpha * adversary`, the quantity whose
    /// gradient the encoder descends.
    pub fn objective(&self, alpha: f64) -> f64 {
        self.mse + self.penalties.iter().sum::<f64>() - alpha * self.adversary.unwrap_or(0.0)
    }
}

fn rows(dataset: &Dataset, indices: impl Iterator<Item = usize>) -> Vec<&[f64]> {
    indices.map(|i| dataset.examples()[i].features()).collect()
}

/// Gradient of the step objective at `params`, every term evaluated at the
/// same parameters, together with the term values and the adversary step.
pub fn step_gradient(
    params: &ModelParams,
    dataset: &Dataset,
    config: &TrainConfig,
    batches: &StepBatches,
    head: Option<&AdversaryHead>,
) -> Result<(Gradient, StepTerms, Option<AdversaryStep>), TrainError> {
    let mut grad = Gradient::zeros(&params.architecture());

    let xs = rows(dataset, batches.main.iter().copied());
    let m = xs.len().max(1) as f64;
    let preds = params.predict_batch(xs.iter().copied())?;
    let mut mse = 0.0;
    let upstream: Vec<f64> = preds
        .iter()
        .zip(&batches.main)
        .map(|(p, &i)| {
            let e = p - dataset.examples()[i].label();
            mse += e * e;
            2.0 * e / m
        })
        .collect();
    grad.add_assign(&params.backward(&xs, &upstream)?);

    let mut penalties = Vec::with_capacity(config.penalties.len());
    for (spec, batch) in config.penalties.iter().zip(&batches.penalties) {
        if batch.is_empty() {
            penalties.push(0.0);
            continue;
        }
        let xs = rows(dataset, batch.iter().map(|&(i, _)| i));
        let s: Vec<bool> = batch.iter().map(|&(_, f)| f).collect();
        let preds = params.predict_batch(xs.iter().copied())?;
        let pen = corr_penalty_and_grad(&preds, &s, spec.lambda)?;
        if pen.grad.iter().any(|&g| g != 0.0) {
            grad.add_assign(&params.backward(&xs, &pen.grad)?);
        }
        penalties.push(pen.value);
    }

    let mut adv_out = None;
    let mut adv_loss = None;
    if let (Some(spec), Some(head)) = (&config.adversary, head) {
        if !batches.adversary.is_empty() {
            let xs = rows(dataset, batches.adversary.iter().map(|&(i, _)| i));
            let s: Vec<bool> = batches.adversary.iter().map(|&(_, f)| f).collect();
            let mut hidden = Vec::with_capacity(xs.len() * head.width());
            for x in &xs {
                hidden.extend(params.forward(x)?.hidden);
            }
            let step = adversary_step(&hidden, &s, head, spec.alpha)?;
            let zeros = vec![0.0; xs.len()];
            grad.add_assign(&params.backward_with_hidden(&xs, &zeros, Some(&step.reversed_input_grad))?);
            adv_loss = Some(step.loss);
            adv_out = Some(step);
        }
    }

    Ok((
        grad,
        StepTerms {
            mse: mse / m,
            penalties,
            adversary: adv_loss,
        },
        adv_out,
    ))
}

/// Step objective at `params` with a fixed adversary head; the function
/// whose finite-difference gradient [`step_gradient`] must match.
pub fn step_objective(
    params: &ModelParams,
    dataset: &Dataset,
    config: &TrainConfig,
    batches: &StepBatches,
    head: Option<&AdversaryHead>,
) -> Result<f64, TrainError> {
    let (_, terms, _) = step_gradient(params, dataset, config, batches, head)?;
    let alpha = config.adversary.as_ref().map_or(0.0, |a| a.alpha);
    Ok(terms.objective(alpha))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub params: ModelParams,
    /// Full training-set MSE before the first update.
    pub initial_mse: f64,
    /// Full training-set MSE after each epoch.
    pub mse_history: Vec<f64>,
    /// Mean `lambda * |corr|` over the steps of each epoch, per penalty.
    pub penalty_history: Vec<Vec<f64>>,
    /// Mean adversary log-loss over the steps of each epoch.
    pub adversary_history: Vec<f64>,
    pub report: MetricsReport,
}

fn dataset_mse(params: &ModelParams, dataset: &Dataset) -> Result<f64, TrainError> {
    let preds = params.predict_batch(dataset.examples().iter().map(|e| e.features()))?;
    let sum: f64 = preds
        .iter()
        .zip(dataset.examples())
        .map(|(p, e)| model::loss_sq(*p, e.label()))
        .sum();
    Ok(sum / dataset.len() as f64)
}

/// Draws the per-step batches of one run, in training order.
#[derive(Debug)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    shuffle: ChaCha8Rng,
    pools: Vec<Option<(GroupPool, usize, ChaCha8Rng)>>,
    adversary: Option<(GroupPool, usize, ChaCha8Rng)>,
    order: Vec<usize>,
}

impl BatchSampler {
    /// Checks every precondition before any randomness is consumed.
    pub fn new(config: &TrainConfig, train: &Dataset, seed: u64) -> Result<Self, TrainError> {
        let mut pools = Vec::with_capacity(config.penalties.len());
        for (i, p) in config.penalties.iter().enumerate() {
            let pool = GroupPool::build(train, config.tau, &p.group)?;
            pool.require(p.batch_size, "penalty")?;
            // a zero-weight penalty is exactly absent
            pools.push((p.lambda > 0.0).then(|| (pool, p.batch_size, stream(seed, PENALTY_STREAM_BASE + i as u64))));
        }
        let adversary = match &config.adversary {
            Some(a) => {
                let pool = GroupPool::build(train, config.tau, &a.group)?;
                pool.require(1, "adversary")?;
                Some((pool, a.batch_size, stream(seed, ADVERSARY_STREAM)))
            }
            None => None,
        };
        Ok(Self {
            n: train.len(),
            batch_size: config.batch_size,
            shuffle: stream(seed, SHUFFLE_STREAM),
            pools,
            adversary,
            order: (0..train.len()).collect(),
        })
    }

    /// Batches of one epoch: a fresh shuffle cut into main batches, each
    /// paired with its penalty and adversary draws.
    pub fn epoch(&mut self) -> Vec<StepBatches> {
        self.order.clear();
        self.order.extend(0..self.n);
        self.order.shuffle(&mut self.shuffle);
        let mut out = Vec::with_capacity(self.n.div_ceil(self.batch_size));
        for chunk in self.order.chunks(self.batch_size) {
            let penalties = self
                .pools
                .iter_mut()
                .map(|slot| match slot {
                    Some((pool, size, rng)) => pool
                        .draw(rng, *size)
                        .into_iter()
                        .map(|k| (pool.indices[k], pool.flags[k]))
                        .collect(),
                    None => Vec::new(),
                })
                .collect();
            let adversary = match &mut self.adversary {
                Some((pool, size, rng)) => pool
                    .draw(rng, *size)
                    .into_iter()
                    .map(|k| (pool.indices[k], pool.flags[k]))
                    .collect(),
                None => Vec::new(),
            };
            out.push(StepBatches {
                main: chunk.to_vec(),
                penalties,
                adversary,
            });
        }
        out
    }
}

/// One full training run with `config.seed`, evaluated on `eval_set`.
pub fn train(config: &TrainConfig, train_set: &Dataset, eval_set: &Dataset) -> Result<RunResult, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Invalid("training set is empty".into()));
    }
    if !train_set.same_schema(eval_set) {
        return Err(TrainError::Invalid(
            "training and evaluation sets differ in feature dimension or group names".into(),
        ));
    }
    let mut sampler = BatchSampler::new(config, train_set, config.seed)?;
    let arch = config.arch(train_set.dim());
    let mut params = model::init(arch, config.seed)?;
    let mut head = config
        .adversary
        .as_ref()
        .map(|_| AdversaryHead::zeros(arch.hidden_width()));

    let initial_mse = dataset_mse(&params, train_set)?;
    let mut mse_history = Vec::with_capacity(config.epochs);
    let mut penalty_history = Vec::with_capacity(config.epochs);
    let mut adversary_history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let batches = sampler.epoch();
        let mut pen_sum = vec![0.0; config.penalties.len()];
        let mut adv_sum = 0.0;
        for b in &batches {
            let (grad, terms, adv) = step_gradient(&params, train_set, config, b, head.as_ref())?;
            let alpha = config.adversary.as_ref().map_or(0.0, |a| a.alpha);
            let value = terms.objective(alpha);
            if !value.is_finite() || grad.values.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite { epoch, step, value });
            }
            params.apply_sgd(&grad, config.learning_rate);
            if let (Some(h), Some(a), Some(spec)) = (head.as_mut(), adv.as_ref(), config.adversary.as_ref()) {
                h.apply(a, spec.learning_rate);
            }
            for (acc, v) in pen_sum.iter_mut().zip(&terms.penalties) {
                *acc += v;
            }
            adv_sum += terms.adversary.unwrap_or(0.0);
            step += 1;
        }
        let steps = batches.len() as f64;
        mse_history.push(dataset_mse(&params, train_set)?);
        penalty_history.push(pen_sum.into_iter().map(|v| v / steps).collect());
        adversary_history.push(adv_sum / steps);
    }
    let report = evaluate(&params, eval_set, &config.eval)?;
    Ok(RunResult {
        params,
        initial_mse,
        mse_history,
        penalty_history,
        adversary_history,
        report,
    })
}

/// Full metrics report of `params` on `eval_set`.
pub fn evaluate(params: &ModelParams, eval_set: &Dataset, spec: &EvalSpec) -> Result<MetricsReport, TrainError> {
    if eval_set.is_empty() {
        return Err(TrainError::Invalid("evaluation set is empty".into()));
    }
    let preds = params.predict_batch(eval_set.examples().iter().map(|e| e.features()))?;
    Ok(evaluate_predictions(&preds, eval_set, spec)?)
}
