use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// One bias-corrected Adam update. Leaves the store untouched if any gradient
/// is non-finite.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::Shape(format!(
            "{} gradient tensors for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        let g = grads.get(id);
        if g.len() != store.get(id).len() {
            return Err(Error::Shape(format!(
                "gradient for `{}` has {} entries, parameter has {}",
                store.name(id),
                g.len(),
                store.get(id).len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(store.name(id).to_string()));
        }
    }
    let t = store.step() + 1;
    store.set_step(t);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (i, p) in store.params_mut().iter_mut().enumerate() {
        let g = grads.get(super::params::ParamId(i));
        let value = p.value.data_mut();
        for j in 0..g.len() {
            p.m[j] = cfg.beta1 * p.m[j] + (1.0 - cfg.beta1) * g[j];
            p.v[j] = cfg.beta2 * p.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = p.m[j] / bc1;
            let vhat = p.v[j] / bc2;
            value[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
