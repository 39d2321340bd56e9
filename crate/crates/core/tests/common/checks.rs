//! Finite-difference fixtures; each returns the worst relative error seen.

use fairgap_core::regularization::{
    adversary_step, corr_penalty_and_grad, pearson_corr, AdversaryHead, AdversarySpec, PenaltySpec,
};
use fairgap_core::trainer::{step_gradient, step_objective, GroupPool, StepBatches};
use fairgap_core::{Architecture, ModelParams, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{central_diff, random_dataset, random_params, rel_err};

fn flags(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    loop {
        let s: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if s.iter().any(|&b| b) && s.iter().any(|&b| !b) {
            return s;
        }
    }
}

pub fn penalty_fixture(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=128);
    let preds: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let s = flags(&mut rng, n);
    let lambda = rng.random_range(0.05..2.0);
    let pen = corr_penalty_and_grad(&preds, &s, lambda).unwrap();
    let fd = central_diff(&preds, |p| lambda * pearson_corr(p, &s).unwrap().corr.abs());
    rel_err(&pen.grad, &fd)
}

/// Head parameter gradient and reversed input gradient.
pub fn adversary_fixture(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=64);
    let width = rng.random_range(1..=16);
    let hidden: Vec<f64> = (0..n * width).map(|_| rng.random_range(0.0..2.0)).collect();
    let s: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let head = AdversaryHead {
        weights: (0..width).map(|_| rng.random_range(-1.5..1.5)).collect(),
        bias: rng.random_range(-1.0..1.0),
    };
    let alpha = rng.random_range(0.1..3.0);
    let step = adversary_step(&hidden, &s, &head, alpha).unwrap();

    let mut theta = head.weights.clone();
    theta.push(head.bias);
    let fd_head = central_diff(&theta, |t| {
        let h = AdversaryHead {
            weights: t[..width].to_vec(),
            bias: t[width],
        };
        h.loss(&hidden, &s).unwrap()
    });
    let mut analytic = step.head_grad_weights.clone();
    analytic.push(step.head_grad_bias);
    let head_err = rel_err(&analytic, &fd_head);

    let fd_input: Vec<f64> = central_diff(&hidden, |h| head.loss(h, &s).unwrap())
        .into_iter()
        .map(|g| -alpha * g)
        .collect();
    (head_err, rel_err(&step.reversed_input_grad, &fd_input))
}

/// `ModelParams::backward` against differences of `sum_i u_i f(x_i)`.
pub fn backward_fixture(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=6);
    let arch = if rng.random_bool(0.3) {
        Architecture::Linear { input_dim: d }
    } else {
        Architecture::Mlp1 {
            input_dim: d,
            hidden: rng.random_range(1..=8),
        }
    };
    let params = random_params(&mut rng, arch);
    let n = rng.random_range(1..=12);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let upstream: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grad = params.backward(&rows, &upstream).unwrap();
    let fd = central_diff(params.values(), |v| {
        let p = ModelParams::from_values(arch, 0, v.to_vec()).unwrap();
        rows.iter().zip(&upstream).map(|(x, u)| u * p.predict(x).unwrap()).sum()
    });
    rel_err(&grad.values, &fd)
}

/// One assembled step: MSE on a main batch, two correlation penalties and a
/// reversed adversary, all at the same parameters.
pub fn full_step_fixture(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=6);
    let hidden = rng.random_range(2..=8);
    let ds = random_dataset(&mut rng, 80, d);
    let config = TrainConfig {
        hidden,
        penalties: vec![
            PenaltySpec {
                group: "g1".into(),
                lambda: rng.random_range(0.1..1.5),
                batch_size: 16,
            },
            PenaltySpec {
                group: "g2".into(),
                lambda: rng.random_range(0.1..1.5),
                batch_size: 16,
            },
        ],
        adversary: Some(AdversarySpec {
            group: "g1".into(),
            alpha: rng.random_range(0.1..2.0),
            learning_rate: 0.1,
            batch_size: 12,
        }),
        ..TrainConfig::default()
    };
    let arch = config.arch(d);
    let params = random_params(&mut rng, arch);
    let head = AdversaryHead {
        weights: (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: rng.random_range(-0.5..0.5),
    };
    let mut draw = |group: &str, size: usize| {
        let pool = GroupPool::build(&ds, config.tau, group).unwrap();
        (0..size)
            .map(|_| {
                let k = rng.random_range(0..pool.indices.len());
                (pool.indices[k], pool.flags[k])
            })
            .collect::<Vec<_>>()
    };
    let penalties = vec![draw("g1", 16), draw("g2", 16)];
    let adversary = draw("g1", 12);
    let main = (0..16).map(|_| rng.random_range(0..ds.len())).collect();
    let batches = StepBatches {
        main,
        penalties,
        adversary,
    };
    let (grad, _, _) = step_gradient(&params, &ds, &config, &batches, Some(&head)).unwrap();
    let fd = central_diff(params.values(), |v| {
        let p = ModelParams::from_values(arch, 0, v.to_vec()).unwrap();
        step_objective(&p, &ds, &config, &batches, Some(&head)).unwrap()
    });
    rel_err(&grad.values, &fd)
}

pub const PENALTY_TOL: f64 = 1e-5;
pub const FULL_STEP_TOL: f64 = 1e-4;
pub const FIXTURES: u64 = 50;

/// Worst errors over all fixtures: (penalty, head, input, full step).
pub fn worst_errors() -> (f64, f64, f64, f64) {
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..FIXTURES {
        worst.0 = worst.0.max(penalty_fixture(seed));
        let (h, i) = adversary_fixture(seed);
        worst.1 = worst.1.max(h);
        worst.2 = worst.2.max(i);
        worst.3 = worst.3.max(full_step_fixture(seed));
    }
    worst
}
