use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::Tensor;

/// Bias-corrected Adam with moment buffers shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed steps.
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One Adam update of `params` with learning rate `lr`. Parameters without
/// an entry in `grads` are treated as having zero gradient.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamSet,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
) -> Result<()> {
    let step = state.t + 1;
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("`{name}`: {:?} vs {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                name: name.clone(),
                step,
            });
        }
    }
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    for (name, p) in params.iter_mut() {
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("no moment buffer for `{name}`")))?;
        let v = state
            .v
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("no moment buffer for `{name}`")))?;
        let g = grads.get(name).map(Tensor::data);
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.map_or(0.0, |g| g[i]);
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let mhat = md[i] / c1;
            let vhat = vd[i] / c2;
            pd[i] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    state.t = step;
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
