//! Synthetic rated datasets with group-skewed label distributions.
//!
//! Each example draws its group flags, then a latent score `y*`: negatives
//! from a Beta bump scaled into `[0, τ)`, positives from a Beta bump scaled
//! into `[τ, 1]`. Subgroups get their own bump, typically pushed toward `τ`.
//! Raters report `y*` plus Gaussian noise clipped to `[0, 1]`; the label is
//! their mean. Features are, in order:
//!
//! * signal: monotone transforms of `gain_c * (y* + noise)`, where `gain_c`
//!   depends on the example's category
//! * nuisance: `N(rho * s_g, 1)`, independent of `y*` given the group flags
//! * category: one-hot covariate whose distribution is skewed by group

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{invalid, ConfigError, KeyValues};
use crate::dataset::{negatives, DataError, Dataset, Example, Threshold};
use crate::metrics::{BinSpec, MetricError};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("infeasible generator config: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Two-parameter Beta bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub alpha: f64,
    pub beta: f64,
}

impl Shape {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    fn parse(key: &str, text: &str) -> Result<Self, ConfigError> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let [a, b] = parts.as_slice() else {
            return Err(invalid(key, text, "expected `alpha, beta`"));
        };
        let a: f64 = a.parse().map_err(|_| invalid(key, text, "alpha is not a number"))?;
        let b: f64 = b.parse().map_err(|_| invalid(key, text, "beta is not a number"))?;
        Ok(Shape::new(a, b))
    }

    fn valid(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.alpha > 0.0 && self.beta > 0.0
    }
}

/// Label distribution for one population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    /// P(y* >= τ).
    pub positive_rate: f64,
    /// Bump over `[0, τ)` for negatives.
    pub negative_shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGen {
    pub name: String,
    /// Membership probability.
    pub proportion: f64,
    pub labels: LabelModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub d_signal: usize,
    pub d_nuisance: usize,
    pub categories: usize,
    /// Extra weight a group member puts on its preferred category; group `g`
    /// prefers category `g % categories`.
    pub category_skew: f64,
    /// Per-category multiplier on the noisy latent score before the signal
    /// transforms. Categories with gain above 1 make the same score look
    /// higher, a shift only a model with interactions can undo.
    pub category_gain: Vec<f64>,
    pub tau: Threshold,
    pub raters: usize,
    pub rater_noise: f64,
    pub signal_noise: f64,
    /// Mean shift of a group's nuisance features for its members.
    pub rho: f64,
    /// Fraction of examples whose group flags are recorded.
    pub known_rate: f64,
    /// Bump over `[τ, 1]` for positives, shared by every population.
    pub positive_shape: Shape,
    pub background: LabelModel,
    /// Membership is drawn independently per group; an example in several
    /// groups takes the label model of the first listed one.
    pub groups: Vec<GroupGen>,
    /// Tail fraction written as the evaluation split by the CLI.
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 20_000,
            d_signal: 4,
            d_nuisance: 2,
            categories: 3,
            category_skew: 5.0,
            category_gain: vec![3.0, 1.0, 1.0],
            tau: Threshold::new(0.5).expect("valid"),
            raters: 3,
            rater_noise: 0.05,
            signal_noise: 0.4,
            rho: 0.5,
            known_rate: 1.0,
            positive_shape: Shape::new(2.0, 2.0),
            background: LabelModel {
                positive_rate: 0.3,
                negative_shape: Shape::new(2.0, 3.0),
            },
            groups: vec![
                GroupGen {
                    name: "group1".into(),
                    proportion: 0.1,
                    labels: LabelModel {
                        positive_rate: 0.3,
                        negative_shape: Shape::new(2.8, 2.0),
                    },
                },
                GroupGen {
                    name: "group2".into(),
                    proportion: 0.1,
                    labels: LabelModel {
                        positive_rate: 0.35,
                        negative_shape: Shape::new(2.5, 2.0),
                    },
                },
            ],
            eval_fraction: 0.5,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn dim(&self) -> usize {
        self.d_signal + self.d_nuisance + self.categories
    }

    /// Reads generator keys, starting from the defaults. Group `g` is
    /// configured with `group.g.proportion`, `group.g.positive_rate` and
    /// `group.g.negative_shape = alpha, beta`; listing any group replaces the
    /// default groups.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self, ConfigError> {
        let mut c = GenConfig::default();
        macro_rules! field {
            ($key:literal, $slot:expr) => {
                if let Some(v) = kv.take($key)? {
                    $slot = v;
                }
            };
        }
        field!("n", c.n);
        field!("d_signal", c.d_signal);
        field!("d_nuisance", c.d_nuisance);
        field!("categories", c.categories);
        field!("category_skew", c.category_skew);
        if let Some(v) = kv.take_str("category_gain") {
            c.category_gain = v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| invalid("category_gain", &v, "expected comma separated numbers"))
                })
                .collect::<Result<_, _>>()?;
        }
        field!("raters", c.raters);
        field!("rater_noise", c.rater_noise);
        field!("signal_noise", c.signal_noise);
        field!("rho", c.rho);
        field!("known_rate", c.known_rate);
        field!("eval_fraction", c.eval_fraction);
        field!("seed", c.seed);
        if let Some(t) = kv.take::<f64>("tau")? {
            c.tau = Threshold::new(t).map_err(|e| invalid("tau", t, e.to_string()))?;
        }
        if let Some(v) = kv.take_str("positive_shape") {
            c.positive_shape = Shape::parse("positive_shape", &v)?;
        }
        field!("background.positive_rate", c.background.positive_rate);
        if let Some(v) = kv.take_str("background.negative_shape") {
            c.background.negative_shape = Shape::parse("background.negative_shape", &v)?;
        }
        let entries = kv.take_prefixed("group.");
        if !entries.is_empty() {
            let mut groups: Vec<GroupGen> = Vec::new();
            for (rest, value) in entries {
                let key = format!("group.{rest}");
                let (name, field) = rest
                    .rsplit_once('.')
                    .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
                let idx = match groups.iter().position(|g| g.name == name) {
                    Some(i) => i,
                    None => {
                        groups.push(GroupGen {
                            name: name.to_string(),
                            proportion: 0.1,
                            labels: c.background.clone(),
                        });
                        groups.len() - 1
                    }
                };
                let g = &mut groups[idx];
                let num = |v: &str| v.parse::<f64>().map_err(|e| invalid(&key, v, e.to_string()));
                match field {
                    "proportion" => g.proportion = num(&value)?,
                    "positive_rate" => g.labels.positive_rate = num(&value)?,
                    "negative_shape" => g.labels.negative_shape = Shape::parse(&key, &value)?,
                    _ => return Err(ConfigError::UnknownKey(key)),
                }
            }
            // Keep a stable, name-sorted order regardless of key order.
            groups.sort_by(|a, b| a.name.cmp(&b.name));
            c.groups = groups;
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::Infeasible(m));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.d_signal == 0 {
            return bad("d_signal must be >= 1".into());
        }
        if !(self.rater_noise >= 0.0 && self.rater_noise.is_finite()) {
            return bad(format!("rater_noise must be >= 0, got {}", self.rater_noise));
        }
        if !(self.signal_noise >= 0.0 && self.signal_noise.is_finite()) {
            return bad(format!("signal_noise must be >= 0, got {}", self.signal_noise));
        }
        if !self.rho.is_finite() || !(self.category_skew >= 0.0 && self.category_skew.is_finite()) {
            return bad("rho and category_skew must be finite, category_skew >= 0".into());
        }
        if self.category_gain.len() != self.categories {
            return bad(format!(
                "category_gain has {} entries for {} categories",
                self.category_gain.len(),
                self.categories
            ));
        }
        if self.category_gain.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("category_gain entries must be finite and > 0".into());
        }
        if !(0.0..=1.0).contains(&self.known_rate) || !(0.0..1.0).contains(&self.eval_fraction) {
            return bad("known_rate must lie in [0, 1] and eval_fraction in [0, 1)".into());
        }
        if !self.positive_shape.valid() {
            return bad("positive_shape parameters must be > 0".into());
        }
        let check_labels = |who: &str, m: &LabelModel| -> Result<(), GenError> {
            if !(0.0..1.0).contains(&m.positive_rate) {
                return Err(GenError::Infeasible(format!(
                    "{who}: positive_rate must lie in [0, 1), got {}",
                    m.positive_rate
                )));
            }
            if !m.negative_shape.valid() {
                return Err(GenError::Infeasible(format!(
                    "{who}: negative_shape parameters must be > 0"
                )));
            }
            Ok(())
        };
        check_labels("background", &self.background)?;
        for g in &self.groups {
            check_labels(&g.name, &g.labels)?;
            if !(g.proportion > 0.0 && g.proportion < 1.0) {
                return bad(format!(
                    "group `{}`: proportion must lie in (0, 1), got {}",
                    g.name, g.proportion
                ));
            }
            let expected = self.n as f64 * g.proportion * (1.0 - g.labels.positive_rate) * self.known_rate;
            if expected < 1.0 {
                return bad(format!(
                    "group `{}` expects {expected:.3} known negatives at n={}; raise n or proportion",
                    g.name, self.n
                ));
            }
        }
        Ok(())
    }

    /// Key-value text reproducing this config.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        line("n", self.n.to_string());
        line("d_signal", self.d_signal.to_string());
        line("d_nuisance", self.d_nuisance.to_string());
        line("categories", self.categories.to_string());
        line("category_skew", self.category_skew.to_string());
        let gains: Vec<String> = self.category_gain.iter().map(f64::to_string).collect();
        line("category_gain", gains.join(", "));
        line("tau", self.tau.to_string());
        line("raters", self.raters.to_string());
        line("rater_noise", self.rater_noise.to_string());
        line("signal_noise", self.signal_noise.to_string());
        line("rho", self.rho.to_string());
        line("known_rate", self.known_rate.to_string());
        line(
            "positive_shape",
            format!("{}, {}", self.positive_shape.alpha, self.positive_shape.beta),
        );
        line("background.positive_rate", self.background.positive_rate.to_string());
        let bs = self.background.negative_shape;
        line("background.negative_shape", format!("{}, {}", bs.alpha, bs.beta));
        for g in &self.groups {
            line(&format!("group.{}.proportion", g.name), g.proportion.to_string());
            line(
                &format!("group.{}.positive_rate", g.name),
                g.labels.positive_rate.to_string(),
            );
            let sh = g.labels.negative_shape;
            line(
                &format!("group.{}.negative_shape", g.name),
                format!("{}, {}", sh.alpha, sh.beta),
            );
        }
        line("eval_fraction", self.eval_fraction.to_string());
        line("seed", self.seed.to_string());
        s
    }
}

// Logistic ramps centred at different points of the label scale, cycled over
// the signal block.
fn signal_transform(j: usize, t: f64) -> f64 {
    const CENTRES: [f64; 4] = [0.3, 0.5, 0.7, 0.4];
    1.0 / (1.0 + (-6.0 * (t - CENTRES[j % 4])).exp())
}

/// Deterministic in `config.seed` (single ChaCha8 stream, fixed draw order).
pub fn generate(config: &GenConfig) -> Result<Dataset, GenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tau = config.tau.value();
    let beta = |s: Shape| Beta::new(s.alpha, s.beta).expect("validated shape");
    let positive = beta(config.positive_shape);
    let background_neg = beta(config.background.negative_shape);
    let group_neg: Vec<Beta<f64>> = config.groups.iter().map(|g| beta(g.labels.negative_shape)).collect();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let names: Vec<String> = config.groups.iter().map(|g| g.name.clone()).collect();
    let mut examples = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let membership: Vec<bool> = config.groups.iter().map(|g| rng.random_bool(g.proportion)).collect();
        let known = rng.random_bool(config.known_rate);

        let first = membership.iter().position(|&m| m);
        let (labels, neg_dist) = match first {
            Some(g) => (&config.groups[g].labels, &group_neg[g]),
            None => (&config.background, &background_neg),
        };
        let latent = if rng.random_bool(labels.positive_rate) {
            tau + (1.0 - tau) * positive.sample(&mut rng)
        } else {
            tau * neg_dist.sample(&mut rng)
        };

        let raters: Vec<f64> = (0..config.raters)
            .map(|_| (latent + config.rater_noise * std_normal.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();

        let category = (config.categories > 0).then(|| {
            let mut weights = vec![1.0; config.categories];
            for (g, &m) in membership.iter().enumerate() {
                if m {
                    weights[g % config.categories] += config.category_skew;
                }
            }
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut chosen = config.categories - 1;
            for (c, w) in weights.iter().enumerate() {
                if u < *w {
                    chosen = c;
                    break;
                }
                u -= w;
            }
            chosen
        });
        let gain = category.map_or(1.0, |c| config.category_gain[c]);

        let mut features = Vec::with_capacity(config.dim());
        for j in 0..config.d_signal {
            let noisy = latent + config.signal_noise * std_normal.sample(&mut rng);
            features.push(signal_transform(j, gain * noisy));
        }
        for j in 0..config.d_nuisance {
            let shift = if config.groups.is_empty() {
                0.0
            } else if membership[j % config.groups.len()] {
                config.rho
            } else {
                0.0
            };
            features.push(shift + std_normal.sample(&mut rng));
        }
        if let Some(c) = category {
            features.extend((0..config.categories).map(|k| if k == c { 1.0 } else { 0.0 }));
        }

        let groups: BTreeMap<String, bool> = if known {
            names.iter().cloned().zip(membership.iter().copied()).collect()
        } else {
            BTreeMap::new()
        };
        let example = if config.raters > 0 {
            Example::from_ratings(features, raters, groups)?
        } else {
            Example::from_label(features, latent, groups)?
        };
        examples.push(example);
    }
    let dataset = Dataset::new(config.dim(), config.raters, names, examples)?;

    let neg = negatives(&dataset, config.tau);
    for g in &config.groups {
        if !neg.iter().any(|e| e.group(&g.name) == Some(true)) {
            return Err(GenError::Infeasible(format!(
                "group `{}` produced no known negatives at n={}",
                g.name, config.n
            )));
        }
    }
    Ok(dataset)
}

/// Counts for one side (subgroup or background) of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    pub examples: usize,
    pub negatives: usize,
    /// Histogram of negative labels over the description bins.
    pub label_histogram: Vec<usize>,
    /// Fraction of examples with each 0/1 indicator feature set.
    pub indicator_rates: Vec<f64>,
}

impl SideSummary {
    /// Share of negatives in the bin closest to τ.
    pub fn top_bin_mass(&self) -> Option<f64> {
        let last = *self.label_histogram.last()?;
        (self.negatives > 0).then(|| last as f64 / self.negatives as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistribution {
    pub group: String,
    pub subgroup: SideSummary,
    pub background: SideSummary,
}

/// Per-group label and covariate distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub bins: BinSpec,
    /// Feature indices whose values are all 0 or 1.
    pub indicator_features: Vec<usize>,
    pub rows: Vec<GroupDistribution>,
}

pub fn describe(dataset: &Dataset, tau: Threshold, bins: &BinSpec) -> Result<Description, GenError> {
    if dataset.is_empty() {
        return Ok(Description {
            bins: *bins,
            indicator_features: Vec::new(),
            rows: Vec::new(),
        });
    }
    let indicator_features: Vec<usize> = (0..dataset.dim())
        .filter(|&j| {
            dataset
                .examples()
                .iter()
                .all(|e| e.features()[j] == 0.0 || e.features()[j] == 1.0)
        })
        .collect();
    let empty = || SideSummary {
        examples: 0,
        negatives: 0,
        label_histogram: vec![0; bins.count()],
        indicator_rates: vec![0.0; indicator_features.len()],
    };
    let mut rows = Vec::with_capacity(dataset.group_names().len());
    for group in dataset.group_names() {
        let mut sides = [empty(), empty()];
        for ex in dataset.examples() {
            let side = match ex.group(group) {
                Some(true) => &mut sides[0],
                Some(false) => &mut sides[1],
                None => continue,
            };
            side.examples += 1;
            for (slot, &j) in side.indicator_rates.iter_mut().zip(&indicator_features) {
                *slot += ex.features()[j];
            }
            if tau.is_negative(ex.label()) {
                side.negatives += 1;
                side.label_histogram[bins.index(ex.label())?] += 1;
            }
        }
        for side in &mut sides {
            if side.examples > 0 {
                let n = side.examples as f64;
                side.indicator_rates.iter_mut().for_each(|r| *r /= n);
            }
        }
        let [subgroup, background] = sides;
        rows.push(GroupDistribution {
            group: group.clone(),
            subgroup,
            background,
        });
    }
    Ok(Description {
        bins: *bins,
        indicator_features,
        rows,
    })
}

impl Description {
    /// Tidy CSV: `group,side,table,key,count,fraction`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GenError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["group", "side", "table", "key", "count", "fraction"])?;
        for row in &self.rows {
            for (side_name, side) in [("subgroup", &row.subgroup), ("background", &row.background)] {
                let mut rec = |table: &str, key: String, count: String, fraction: String| {
                    wtr.write_record([row.group.as_str(), side_name, table, &key, &count, &fraction])
                };
                rec("examples", String::new(), side.examples.to_string(), String::new())?;
                rec("negatives", String::new(), side.negatives.to_string(), String::new())?;
                for (b, &c) in side.label_histogram.iter().enumerate() {
                    let frac = if side.negatives > 0 {
                        (c as f64 / side.negatives as f64).to_string()
                    } else {
                        String::new()
                    };
                    rec("label_bin", b.to_string(), c.to_string(), frac)?;
                }
                for (&j, &r) in self.indicator_features.iter().zip(&side.indicator_rates) {
                    rec("indicator", format!("f{j}"), String::new(), r.to_string())?;
                }
            }
        }
        wtr.flush().map_err(|e| GenError::Csv(e.into()))?;
        Ok(())
    }
}
