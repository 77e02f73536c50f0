use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Adaptive-moment (Adam) hyperparameters.
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

/// One descent step on `ids` using their accumulated gradients. Gradients are
/// left untouched; the caller zeroes them.
pub fn adam_step(store: &mut ParamStore, ids: &[ParamId], cfg: &AdamConfig) -> Result<()> {
    for &id in ids {
        if store.grad(id).iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", store.name(id))));
        }
    }
    for &id in ids {
        let p = store.get_mut(id);
        p.steps += 1;
        let t = p.steps as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let data = p.value.data_mut();
        for i in 0..data.len() {
            let g = p.grad[i];
            p.first_moment[i] = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * g;
            p.second_moment[i] = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.first_moment[i] / c1;
            let v_hat = p.second_moment[i] / c2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        if !p.value.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{}` after update", p.name)));
        }
    }
    Ok(())
}
