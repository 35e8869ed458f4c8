//! AdamW with decoupled weight decay and global-norm gradient clipping.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GptModel;
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("optimizer betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config(
                "need eps > 0, weight_decay >= 0 and grad_clip > 0".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moments per parameter name.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    pub step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<F: Scalar>(grads: &BTreeMap<String, Tensor<F>>) -> f64 {
    grads.values().map(Tensor::sum_sq).sum::<f64>().sqrt()
}

/// Scales `grads` so their global norm is at most `max_norm` and returns
/// the factor used. A non-finite norm leaves the gradients untouched.
pub fn grad_clip<F: Scalar>(grads: &mut BTreeMap<String, Tensor<F>>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if !norm.is_finite() || norm <= max_norm {
        return 1.0;
    }
    let factor = max_norm / norm;
    for g in grads.values_mut() {
        g.scale_assign(F::of(factor));
    }
    factor
}

/// One AdamW update of every parameter of `model` that has a gradient.
/// Weight decay applies to matrices only.
pub fn optimizer_step<F: Scalar>(
    model: &mut GptModel<F>,
    grads: &BTreeMap<String, Tensor<F>>,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::Argument(format!("learning rate {lr} must be non-negative")));
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient for {name}")));
    }
    let mut shape_err = None;
    model.visit_params(|name, p| {
        if let Some(g) = grads.get(name) {
            if g.shape() != p.shape() && shape_err.is_none() {
                shape_err = Some(format!("gradient for {name} has shape {:?}, parameter {:?}", g.shape(), p.shape()));
            }
        }
    });
    if let Some(e) = shape_err {
        return Err(Error::Dimension(e));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let moments = &mut state.moments;
    model.visit_params_mut(|name, p| {
        let Some(g) = grads.get(name) else { return };
        let (m, v) = moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
        let decay = if p.ndim() >= 2 { 1.0 - lr * cfg.weight_decay } else { 1.0 };
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi.f64();
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            *w = F::of(w.f64() * decay - lr * update);
        }
    });
    Ok(())
}
