use serde::{Deserialize, Serialize};

use crate::error::{Result, RfnError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());
        AdamState {
            step: 0,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
        }
    }
}

/// One bias-corrected ADAM update. Gradients are checked for finiteness
/// before anything is written, so a failed step leaves no partial update.
pub fn adam_step(config: &AdamConfig, state: &mut AdamState, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(RfnError::contract(format!(
            "adam: {} parameters, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.len() != params.values()[i].len() {
            return Err(RfnError::contract(format!(
                "adam: gradient of {} has {} entries, parameter has {}",
                params.names()[i],
                g.len(),
                params.values()[i].len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(RfnError::Divergence {
                what: params.names()[i].clone(),
                detail: "non-finite gradient".into(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.values_mut()[i].data_mut();
        for j in 0..g.len() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
