//! Linear and one-hidden-layer ReLU regressors with hand-written backprop.
//!
//! Parameters live in one flat vector so that SGD updates, finite-difference
//! checks and serialization all share a single layout:
//!
//! * linear: `[w (d), b]`
//! * mlp1:   `[W1 (H x d, row-major), b1 (H), w2 (H), b2]`

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch has {batch} examples but {upstream} upstream gradients")]
    UpstreamMismatch { batch: usize, upstream: usize },
    #[error("hidden upstream has {found} values, expected {expected}")]
    HiddenUpstreamMismatch { expected: usize, found: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("unsupported params format version {0}")]
    UnsupportedVersion(u32),
    #[error("params document inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear { input_dim: usize },
    Mlp1 { input_dim: usize, hidden: usize },
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Linear { input_dim } | Architecture::Mlp1 { input_dim, .. } => input_dim,
        }
    }

    /// Hidden width, 0 for the linear model.
    pub fn hidden_width(&self) -> usize {
        match *self {
            Architecture::Linear { .. } => 0,
            Architecture::Mlp1 { hidden, .. } => hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::Linear { input_dim } => input_dim + 1,
            Architecture::Mlp1 { input_dim, hidden } => hidden * input_dim + 2 * hidden + 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim() == 0 {
            return Err(ModelError::InvalidArchitecture("input_dim must be >= 1".into()));
        }
        if let Architecture::Mlp1 { hidden: 0, .. } = self {
            return Err(ModelError::InvalidArchitecture("hidden width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Model weights plus the seed they were initialised from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    init_seed: u64,
    values: Vec<f64>,
}

/// Gradient with the same flat layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub prediction: f64,
    /// Post-ReLU hidden activations; empty for the linear model.
    pub hidden: Vec<f64>,
}

/// Glorot-uniform initialisation with zero biases.
///
/// Weights are drawn in layout order from a `ChaCha8Rng` seeded with
/// `seed_from_u64(seed)`, each through `Uniform::new_inclusive(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`. The ChaCha stream is portable, so the
/// same `(arch, seed)` gives bit-identical weights everywhere.
pub fn init(arch: Architecture, seed: u64) -> Result<ModelParams, ModelError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(arch.param_count());
    let mut draw = |count: usize, fan_in: usize, fan_out: usize, out: &mut Vec<f64>| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        out.extend((0..count).map(|_| dist.sample(&mut rng)));
    };
    match arch {
        Architecture::Linear { input_dim } => {
            draw(input_dim, input_dim, 1, &mut values);
            values.push(0.0);
        }
        Architecture::Mlp1 { input_dim, hidden } => {
            draw(hidden * input_dim, input_dim, hidden, &mut values);
            values.extend(std::iter::repeat_n(0.0, hidden));
            draw(hidden, hidden, 1, &mut values);
            values.push(0.0);
        }
    }
    Ok(ModelParams {
        arch,
        init_seed: seed,
        values,
    })
}

impl ModelParams {
    /// Wraps raw values; `values` must follow the documented flat layout.
    pub fn from_values(arch: Architecture, init_seed: u64, values: Vec<f64>) -> Result<Self, ModelError> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(ModelError::Inconsistent(format!(
                "expected {} values, found {}",
                arch.param_count(),
                values.len()
            )));
        }
        Ok(Self {
            arch,
            init_seed,
            values,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `self -= step * grad`.
    pub fn apply_sgd(&mut self, grad: &Gradient, step: f64) {
        for (p, g) in self.values.iter_mut().zip(&grad.values) {
            *p -= step * g;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        let expected = self.arch.input_dim();
        if x.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace, ModelError> {
        self.check_input(x)?;
        let mut hidden = vec![0.0; self.arch.hidden_width()];
        let prediction = self.forward_into(x, &mut hidden);
        Ok(ForwardTrace { prediction, hidden })
    }

    /// Prediction only; `x` must already have the right length.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_input(x)?;
        Ok(match self.arch {
            Architecture::Linear { .. } => self.forward_into(x, &mut []),
            Architecture::Mlp1 { hidden, .. } => {
                let mut h = vec![0.0; hidden];
                self.forward_into(x, &mut h)
            }
        })
    }

    pub fn predict_batch<'a, I>(&self, rows: I) -> Result<Vec<f64>, ModelError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut hidden = vec![0.0; self.arch.hidden_width()];
        rows.into_iter()
            .map(|x| {
                self.check_input(x)?;
                Ok(self.forward_into(x, &mut hidden))
            })
            .collect()
    }

    // Writes post-ReLU activations into `hidden` and returns the prediction.
    fn forward_into(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        match self.arch {
            Architecture::Linear { input_dim } => {
                let (w, b) = self.values.split_at(input_dim);
                dot(w, x) + b[0]
            }
            Architecture::Mlp1 { input_dim, hidden: h } => {
                let (w1, rest) = self.values.split_at(h * input_dim);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                let mut out = b2[0];
                for j in 0..h {
                    let pre = dot(&w1[j * input_dim..(j + 1) * input_dim], x) + b1[j];
                    let act = if pre > 0.0 { pre } else { 0.0 };
                    hidden[j] = act;
                    out += w2[j] * act;
                }
                out
            }
        }
    }

    /// Exact gradient of `sum_i upstream[i] * prediction_i` over the batch.
    pub fn backward(&self, batch: &[&[f64]], upstream: &[f64]) -> Result<Gradient, ModelError> {
        self.backward_with_hidden(batch, upstream, None)
    }

    /// Like [`backward`](Self::backward), additionally pushing per-example
    /// gradients with respect to the post-ReLU hidden activations
    /// (`hidden_upstream`, row-major `batch x H`) into the first layer.
    pub fn backward_with_hidden(
        &self,
        batch: &[&[f64]],
        upstream: &[f64],
        hidden_upstream: Option<&[f64]>,
    ) -> Result<Gradient, ModelError> {
        if batch.len() != upstream.len() {
            return Err(ModelError::UpstreamMismatch {
                batch: batch.len(),
                upstream: upstream.len(),
            });
        }
        let width = self.arch.hidden_width();
        if let Some(hu) = hidden_upstream {
            if hu.len() != batch.len() * width {
                return Err(ModelError::HiddenUpstreamMismatch {
                    expected: batch.len() * width,
                    found: hu.len(),
                });
            }
        }
        for x in batch {
            self.check_input(x)?;
        }
        let mut grad = Gradient::zeros(&self.arch);
        let g = &mut grad.values;
        match self.arch {
            Architecture::Linear { input_dim } => {
                for (x, &u) in batch.iter().zip(upstream) {
                    for (gw, xi) in g[..input_dim].iter_mut().zip(x.iter()) {
                        *gw += u * xi;
                    }
                    g[input_dim] += u;
                }
            }
            Architecture::Mlp1 { input_dim, hidden: h } => {
                let w1 = &self.values[..h * input_dim];
                let b1 = &self.values[h * input_dim..h * input_dim + h];
                let w2 = &self.values[h * input_dim + h..h * input_dim + 2 * h];
                let (gw1, rest) = g.split_at_mut(h * input_dim);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(h);
                for (n, (x, &u)) in batch.iter().zip(upstream).enumerate() {
                    gb2[0] += u;
                    for j in 0..h {
                        let row = &w1[j * input_dim..(j + 1) * input_dim];
                        let pre = dot(row, x) + b1[j];
                        // relu'(0) = 0
                        if pre <= 0.0 {
                            continue;
                        }
                        gw2[j] += u * pre;
                        let mut delta = u * w2[j];
                        if let Some(hu) = hidden_upstream {
                            delta += hu[n * h + j];
                        }
                        if delta == 0.0 {
                            continue;
                        }
                        gb1[j] += delta;
                        for (gw, xi) in gw1[j * input_dim..(j + 1) * input_dim].iter_mut().zip(x.iter()) {
                            *gw += delta * xi;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn loss_sq(prediction: f64, label: f64) -> f64 {
    let e = prediction - label;
    e * e
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    name: String,
    /// `[rows, cols]` of the weight matrix.
    shape: [usize; 2],
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    version: u32,
    architecture: Architecture,
    init_seed: u64,
    layers: Vec<LayerDoc>,
}

impl ModelParams {
    /// Versioned JSON: shapes plus row-major weights at full precision.
    pub fn to_json(&self) -> Result<String, ModelError> {
        let layers = match self.arch {
            Architecture::Linear { input_dim } => vec![LayerDoc {
                name: "output".into(),
                shape: [1, input_dim],
                weights: self.values[..input_dim].to_vec(),
                bias: vec![self.values[input_dim]],
            }],
            Architecture::Mlp1 { input_dim, hidden } => {
                let split = hidden * input_dim;
                vec![
                    LayerDoc {
                        name: "hidden".into(),
                        shape: [hidden, input_dim],
                        weights: self.values[..split].to_vec(),
                        bias: self.values[split..split + hidden].to_vec(),
                    },
                    LayerDoc {
                        name: "output".into(),
                        shape: [1, hidden],
                        weights: self.values[split + hidden..split + 2 * hidden].to_vec(),
                        bias: vec![self.values[split + 2 * hidden]],
                    },
                ]
            }
        };
        let doc = ParamsDoc {
            version: PARAMS_FORMAT_VERSION,
            architecture: self.arch,
            init_seed: self.init_seed,
            layers,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ParamsDoc = serde_json::from_str(text)?;
        if doc.version != PARAMS_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(doc.version));
        }
        let mut values = Vec::with_capacity(doc.architecture.param_count());
        for layer in &doc.layers {
            if layer.weights.len() != layer.shape[0] * layer.shape[1] || layer.bias.len() != layer.shape[0] {
                return Err(ModelError::Inconsistent(format!("layer `{}` shape", layer.name)));
            }
            values.extend_from_slice(&layer.weights);
            values.extend_from_slice(&layer.bias);
        }
        // Layout stores the output weights before the output bias, which the
        // per-layer concatenation above already matches.
        Self::from_values(doc.architecture, doc.init_seed, values)
    }
}
