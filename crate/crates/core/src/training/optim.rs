//! Adam and SGD with momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hourglass::Parameter;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// SGD only.
    pub momentum: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig { learning_rate, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !unit(self.beta1) || !unit(self.beta2) || !unit(self.momentum) {
            return Err(Error::config("beta1, beta2 and momentum must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("epsilon must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}

/// Per-parameter moment buffers. For SGD only `first` (the velocity) is used.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        OptimizerState { step: 0, first: zeros(), second: zeros() }
    }
}

/// One update of every parameter. Nothing is modified when any gradient is
/// non-finite.
pub fn adam_step<T: Real>(
    params: &mut [Parameter<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    config: &OptimizerConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() || state.second.len() != params.len() {
        return Err(Error::contract(format!(
            "{} parameters, {} gradients, {} state slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if g.shape() != p.value.shape() {
            return Err(Error::shape(format!("gradient of {} has shape {}", p.name, g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::Numerical(format!("non-finite gradient for parameter {}", p.name)));
        }
    }
    state.step += 1;
    let c = |v: f64| T::from_f64_lossy(v);
    let (lr, wd) = (c(config.learning_rate), c(config.weight_decay));
    match config.kind {
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (c(config.beta1), c(config.beta2), c(config.epsilon));
            let t = state.step as i32;
            let corr1 = c(1.0 - config.beta1.powi(t));
            let corr2 = c(1.0 - config.beta2.powi(t));
            for (i, p) in params.iter_mut().enumerate() {
                let (m, v) = (state.first[i].data_mut(), state.second[i].data_mut());
                for (k, (x, &g)) in p.value.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                    let g = g + wd * *x;
                    m[k] = b1 * m[k] + (T::one() - b1) * g;
                    v[k] = b2 * v[k] + (T::one() - b2) * g * g;
                    let m_hat = m[k] / corr1;
                    let v_hat = v[k] / corr2;
                    *x -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        OptimizerKind::SgdMomentum => {
            let mu = c(config.momentum);
            for (i, p) in params.iter_mut().enumerate() {
                let vel = state.first[i].data_mut();
                for (k, (x, &g)) in p.value.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                    vel[k] = mu * vel[k] + g + wd * *x;
                    *x -= lr * vel[k];
                }
            }
        }
    }
    Ok(())
}
