use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{backward, forward, Mode};
use super::params::ModelParams;
use crate::corpus::Batch;
use crate::error::Result;

/// One sampled parameter of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradSample {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn relative_error(&self) -> f64 {
        let (a, n) = (self.analytic, self.numeric);
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }
}

/// Central-difference gradients for `samples` random parameters (eval mode).
pub fn sample_gradients(
    params: &ModelParams,
    batch: &Batch,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<GradSample>> {
    let (_, cache) = forward(params, batch, Mode::Eval)?;
    let grads = backward(params, cache)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let total = params.num_params();
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let index = rng.gen_range(0..total);
        let original = probe.get_flat(index);
        probe.set_flat(index, original + epsilon);
        let (plus, _) = forward(&probe, batch, Mode::Eval)?;
        probe.set_flat(index, original - epsilon);
        let (minus, _) = forward(&probe, batch, Mode::Eval)?;
        probe.set_flat(index, original);
        // L(θ+ε) − L(θ−ε), summed token by token so the two large totals
        // never cancel against each other.
        let diff: f64 = plus
            .as_slice()
            .iter()
            .zip(minus.as_slice())
            .map(|(p, m)| p - m)
            .sum();
        out.push(GradSample {
            index,
            analytic: grads.get_flat(index),
            numeric: diff / (2.0 * epsilon),
        });
    }
    Ok(out)
}

/// Largest relative error between analytic and central-difference
/// gradients over `samples` randomly chosen parameters.
pub fn finite_difference_check(
    params: &ModelParams,
    batch: &Batch,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(sample_gradients(params, batch, epsilon, samples, seed)?
        .iter()
        .map(GradSample::relative_error)
        .fold(0.0, f64::max))
}
