use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Mat, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Mat>,
    pub v: BTreeMap<String, Mat>,
    pub t: u64,
}

/// One bias-corrected Adam update. Every gradient is checked before any parameter
/// changes, so a non-finite gradient leaves `params` and `state` untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params.require(name)?;
        if p.shape() != g.shape() {
            return Err(Error::config(format!(
                "gradient shape {:?} != parameter shape {:?} for `{name}`",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::numerical(format!("non-finite gradient for `{name}`")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads.iter() {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Mat::zeros(g.rows, g.cols));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Mat::zeros(g.rows, g.cols));
        let p = params
            .get_mut_unversioned(name)
            .expect("checked above");
        for k in 0..g.data.len() {
            let gk = g.data[k];
            m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * gk;
            v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m.data[k] / bc1;
            let v_hat = v.data[k] / bc2;
            p.data[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    params.bump_version();
    Ok(())
}
