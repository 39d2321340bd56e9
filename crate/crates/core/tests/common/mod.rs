//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod reference;

use std::collections::BTreeMap;

use fairgap_core::{Architecture, Dataset, Example, ModelParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `r = (n Σps - Σp Σs) / sqrt((n Σp² - (Σp)²)(n Σs² - (Σs)²))`.
pub fn textbook_pearson(p: &[f64], s: &[bool]) -> f64 {
    let n = p.len() as f64;
    let (mut sp, mut ss, mut spp, mut sss, mut sps) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &b) in p.iter().zip(s) {
        let y = if b { 1.0 } else { 0.0 };
        sp += x;
        ss += y;
        spp += x * x;
        sss += y * y;
        sps += x * y;
    }
    (n * sps - sp * ss) / ((n * spp - sp * sp) * (n * sss - ss * ss)).sqrt()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

pub const FD_STEP: f64 = 1e-6;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Random dataset over groups `g1` and `g2`; about a tenth of the examples
/// carry no demographics. Labels are uniform on [0, 1].
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Dataset {
    let names = vec!["g1".to_string(), "g2".to_string()];
    let examples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: f64 = rng.random_range(0.0..=1.0);
            let mut groups = BTreeMap::new();
            if rng.random_bool(0.9) {
                groups.insert("g1".to_string(), rng.random_bool(0.4));
                groups.insert("g2".to_string(), rng.random_bool(0.3));
            }
            Example::from_label(x, y, groups).unwrap()
        })
        .collect();
    Dataset::new(dim, 0, names, examples).unwrap()
}

/// Random parameters for `arch`, drawn from `rng`.
pub fn random_params(rng: &mut ChaCha8Rng, arch: Architecture) -> ModelParams {
    let values = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ModelParams::from_values(arch, 0, values).unwrap()
}

/// Plain one-hidden-layer ReLU network over the flat layout
/// `[w1 (h x d), b1, w2, b2]`, written out by hand.
pub struct RefMlp<'a> {
    pub v: &'a [f64],
    pub d: usize,
    pub h: usize,
}

impl RefMlp<'_> {
    pub fn pre(&self, x: &[f64], j: usize) -> f64 {
        let row = &self.v[j * self.d..(j + 1) * self.d];
        let mut z = self.v[self.d * self.h + j];
        for (w, xk) in row.iter().zip(x) {
            z += w * xk;
        }
        z
    }

    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        (0..self.h).map(|j| self.pre(x, j).max(0.0)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let hid = self.hidden(x);
        let w2 = &self.v[self.d * self.h + self.h..self.d * self.h + 2 * self.h];
        let mut out = self.v[self.d * self.h + 2 * self.h];
        for j in 0..self.h {
            out += w2[j] * hid[j];
        }
        out
    }

    /// Adds `dout * d(pred)/d(theta) + sum_j dh[j] * d(h_j)/d(theta)` to `g`.
    pub fn accumulate(&self, x: &[f64], dout: f64, dh: Option<&[f64]>, g: &mut [f64]) {
        let (d, h) = (self.d, self.h);
        g[d * h + 2 * h] += dout;
        for j in 0..h {
            let z = self.pre(x, j);
            if z <= 0.0 {
                continue;
            }
            g[d * h + h + j] += dout * z;
            let delta = dout * self.v[d * h + h + j] + dh.map_or(0.0, |v| v[j]);
            g[d * h + j] += delta;
            for k in 0..d {
                g[j * d + k] += delta * x[k];
            }
        }
    }
}

pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}
