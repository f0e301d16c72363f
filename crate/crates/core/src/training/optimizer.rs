use crate::error::{Error, Result};
use crate::neural::ModelParams;

pub const DEFAULT_ADAGRAD_EPSILON: f64 = 1e-6;

/// Adagrad squared-gradient accumulators, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: ModelParams,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self::with_epsilon(params, DEFAULT_ADAGRAD_EPSILON)
    }

    pub fn with_epsilon(params: &ModelParams, epsilon: f64) -> Self {
        OptimizerState {
            accumulators: ModelParams::zeros(params.arch),
            epsilon,
        }
    }
}

/// `acc += g²; θ −= lr · g / (√acc + ε)`, elementwise.
pub fn adagrad_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.accumulators) {
        return Err(Error::ShapeMismatch("parameters, gradients and optimizer state differ".into()));
    }
    let eps = state.epsilon;
    for ((theta, g), acc) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.accumulators.tensors_mut())
    {
        for ((p, &g), a) in theta.iter_mut().zip(g).zip(acc.iter_mut()) {
            if g == 0.0 {
                continue;
            }
            *a += g * g;
            *p -= lr * g / (a.sqrt() + eps);
        }
    }
    if !params.is_finite() || !state.accumulators.is_finite() {
        return Err(Error::NonFinite("Adagrad update".into()));
    }
    Ok(())
}
