use serde::{Deserialize, Serialize};

use super::RegularizationError;

/// Settings for the adversarial head trained on one group's negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub group: String,
    /// Gradient-reversal strength; the encoder receives `-alpha` times the
    /// head's input gradient.
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl AdversarySpec {
    pub fn validate(&self) -> Result<(), RegularizationError> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(RegularizationError::InvalidSpec(format!(
                "adversary alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(RegularizationError::InvalidSpec(format!(
                "adversary learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(RegularizationError::InvalidSpec(
                "adversary batch size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Single sigmoid unit reading the model's last hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AdversaryHead {
    pub fn zeros(width: usize) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }

    fn logit(&self, z: &[f64]) -> f64 {
        self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Mean log-loss of the head predicting `s` from row-major hidden rows.
    pub fn loss(&self, hidden: &[f64], s: &[bool]) -> Result<f64, RegularizationError> {
        check_shape(self.width(), hidden, s)?;
        if s.is_empty() {
            return Ok(0.0);
        }
        let total: f64 = hidden
            .chunks_exact(self.width().max(1))
            .zip(s)
            .map(|(z, &si)| log_loss(self.logit(z), si))
            .sum();
        Ok(total / s.len() as f64)
    }

    /// Plain gradient-descent update of the head.
    pub fn apply(&mut self, step: &AdversaryStep, learning_rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(&step.head_grad_weights) {
            *w -= learning_rate * g;
        }
        self.bias -= learning_rate * step.head_grad_bias;
    }
}

/// Head gradient, reversed encoder gradient and loss for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryStep {
    pub head_grad_weights: Vec<f64>,
    pub head_grad_bias: f64,
    /// `-alpha * d(loss)/d(hidden)`, row-major `batch x H`.
    pub reversed_input_grad: Vec<f64>,
    pub loss: f64,
}

fn check_shape(width: usize, hidden: &[f64], s: &[bool]) -> Result<(), RegularizationError> {
    if hidden.len() != width * s.len() {
        return Err(RegularizationError::HiddenShape {
            expected: width * s.len(),
            found: hidden.len(),
        });
    }
    Ok(())
}

// -[s ln sigma(t) + (1 - s) ln(1 - sigma(t))], computed without overflow.
fn log_loss(logit: f64, s: bool) -> f64 {
    let softplus = if logit > 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    if s {
        softplus - logit
    } else {
        softplus
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// One joint step of the adversary on a batch of negatives.
///
/// The head's gradient is the true gradient of its mean log-loss; the gradient
/// handed back to the encoder is the head's input gradient scaled by `-alpha`.
/// An empty batch is a no-op.
pub fn adversary_step(
    hidden: &[f64],
    s: &[bool],
    head: &AdversaryHead,
    alpha: f64,
) -> Result<AdversaryStep, RegularizationError> {
    let width = head.width();
    check_shape(width, hidden, s)?;
    let mut step = AdversaryStep {
        head_grad_weights: vec![0.0; width],
        head_grad_bias: 0.0,
        reversed_input_grad: vec![0.0; hidden.len()],
        loss: 0.0,
    };
    if s.is_empty() {
        return Ok(step);
    }
    let inv_n = 1.0 / s.len() as f64;
    for (i, &si) in s.iter().enumerate() {
        let z = &hidden[i * width..(i + 1) * width];
        let logit = head.logit(z);
        step.loss += log_loss(logit, si) * inv_n;
        let err = (sigmoid(logit) - if si { 1.0 } else { 0.0 }) * inv_n;
        step.head_grad_bias += err;
        for (g, x) in step.head_grad_weights.iter_mut().zip(z) {
            *g += err * x;
        }
        if alpha != 0.0 {
            for (r, w) in step.reversed_input_grad[i * width..(i + 1) * width]
                .iter_mut()
                .zip(&head.weights)
            {
                *r = -alpha * err * w;
            }
        }
    }
    Ok(step)
}
