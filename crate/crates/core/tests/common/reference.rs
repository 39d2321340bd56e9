//! Hand-written training loops used as oracles for the trainer.

use fairgap_core::model;
use fairgap_core::regularization::AdversaryHead;
use fairgap_core::trainer::{BatchSampler, StepBatches};
use fairgap_core::{Dataset, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sigmoid, RefMlp};

fn dims(config: &TrainConfig, ds: &Dataset) -> (usize, usize) {
    (ds.dim(), config.hidden)
}

pub fn dataset_mse(v: &[f64], d: usize, h: usize, ds: &Dataset) -> f64 {
    let net = RefMlp { v, d, h };
    let sum: f64 = ds
        .examples()
        .iter()
        .map(|e| {
            let r = net.predict(e.features()) - e.label();
            r * r
        })
        .sum();
    sum / ds.len() as f64
}

/// Minibatch SGD on squared error alone: same init seed, same shuffle stream,
/// nothing else. Returns final weights and the per-epoch training MSE.
pub fn plain_sgd(config: &TrainConfig, ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let (d, h) = dims(config, ds);
    let mut v = model::init(config.arch(d), config.seed).unwrap().values().to_vec();
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(1);
    let mut history = Vec::new();
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(config.batch_size) {
            let mut g = vec![0.0; v.len()];
            let net = RefMlp { v: &v, d, h };
            let m = chunk.len() as f64;
            for &i in chunk {
                let e = &ds.examples()[i];
                let r = net.predict(e.features()) - e.label();
                net.accumulate(e.features(), 2.0 * r / m, None, &mut g);
            }
            for (p, gi) in v.iter_mut().zip(&g) {
                *p -= config.learning_rate * gi;
            }
        }
        history.push(dataset_mse(&v, d, h, ds));
    }
    (v, history)
}

/// `d r / d p_i` for the raw-sum form of the Pearson coefficient.
fn textbook_corr_grad(p: &[f64], s: &[bool]) -> Option<(f64, Vec<f64>)> {
    let n = p.len() as f64;
    let sv: Vec<f64> = s.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let (sp, ss): (f64, f64) = (p.iter().sum(), sv.iter().sum());
    let spp: f64 = p.iter().map(|x| x * x).sum();
    let sss: f64 = sv.iter().map(|x| x * x).sum();
    let sps: f64 = p.iter().zip(&sv).map(|(x, y)| x * y).sum();
    let a = n * spp - sp * sp;
    let b = n * sss - ss * ss;
    if a <= 1e-12 || b <= 1e-12 {
        return None;
    }
    let num = n * sps - sp * ss;
    let den = (a * b).sqrt();
    let r = num / den;
    let grad = p
        .iter()
        .zip(&sv)
        .map(|(&pi, &si)| (n * si - ss) / den - r * (2.0 * n * pi - 2.0 * sp) / (2.0 * a))
        .collect();
    Some((r, grad))
}

/// The full step written out by hand: squared error on the main batch,
/// `lambda |corr|` on each penalty batch and the reversed adversary.
pub fn reference_step(
    config: &TrainConfig,
    ds: &Dataset,
    v: &mut Vec<f64>,
    head: &mut Option<AdversaryHead>,
    b: &StepBatches,
) {
    let (d, h) = dims(config, ds);
    let mut g = vec![0.0; v.len()];
    let net = RefMlp { v, d, h };
    let x = |i: usize| ds.examples()[i].features();

    let m = b.main.len() as f64;
    for &i in &b.main {
        let r = net.predict(x(i)) - ds.examples()[i].label();
        net.accumulate(x(i), 2.0 * r / m, None, &mut g);
    }

    for (spec, batch) in config.penalties.iter().zip(&b.penalties) {
        if batch.is_empty() {
            continue;
        }
        let p: Vec<f64> = batch.iter().map(|&(i, _)| net.predict(x(i))).collect();
        let s: Vec<bool> = batch.iter().map(|&(_, f)| f).collect();
        if let Some((r, dr)) = textbook_corr_grad(&p, &s) {
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            for (&(i, _), dri) in batch.iter().zip(dr) {
                net.accumulate(x(i), spec.lambda * sign * dri, None, &mut g);
            }
        }
    }

    let mut head_update = None;
    if let (Some(spec), Some(hd)) = (&config.adversary, head.as_ref()) {
        let n = b.adversary.len() as f64;
        let mut gw = vec![0.0; h];
        let mut gb = 0.0;
        for &(i, f) in &b.adversary {
            let hid = net.hidden(x(i));
            let t: f64 = hd.weights.iter().zip(&hid).map(|(w, z)| w * z).sum::<f64>() + hd.bias;
            let e = (sigmoid(t) - if f { 1.0 } else { 0.0 }) / n;
            for (gwj, z) in gw.iter_mut().zip(&hid) {
                *gwj += e * z;
            }
            gb += e;
            let dh: Vec<f64> = hd.weights.iter().map(|w| -spec.alpha * e * w).collect();
            net.accumulate(x(i), 0.0, Some(&dh), &mut g);
        }
        head_update = Some((gw, gb, spec.learning_rate));
    }

    for (p, gi) in v.iter_mut().zip(&g) {
        *p -= config.learning_rate * gi;
    }
    if let (Some(hd), Some((gw, gb, lr))) = (head.as_mut(), head_update) {
        for (w, gwj) in hd.weights.iter_mut().zip(gw) {
            *w -= lr * gwj;
        }
        hd.bias -= lr * gb;
    }
}

/// Runs [`reference_step`] over the batches the trainer's sampler draws.
pub fn reference_train(config: &TrainConfig, ds: &Dataset) -> Vec<f64> {
    let (d, h) = dims(config, ds);
    let mut v = model::init(config.arch(d), config.seed).unwrap().values().to_vec();
    let mut head = config.adversary.as_ref().map(|_| AdversaryHead::zeros(h));
    let mut sampler = BatchSampler::new(config, ds, config.seed).unwrap();
    for _ in 0..config.epochs {
        for b in sampler.epoch() {
            reference_step(config, ds, &mut v, &mut head, &b);
        }
    }
    v
}
