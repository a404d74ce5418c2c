use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer selection as it appears in training configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Sgd,
}

fn default_beta1() -> f64 {
    AdamHyper::default().beta1
}
fn default_beta2() -> f64 {
    AdamHyper::default().beta2
}
fn default_eps() -> f64 {
    AdamHyper::default().eps
}

impl Default for OptimizerKind {
    fn default() -> Self {
        let h = AdamHyper::default();
        OptimizerKind::Adam {
            beta1: h.beta1,
            beta2: h.beta2,
            eps: h.eps,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

fn check_grads<T: Scalar>(params: &[Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        bail!(Dimension, "{} parameters but {} gradients", params.len(), grads.len());
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            bail!(Dimension, "parameter {i}: shape {:?} but gradient {:?}", p.shape(), g.shape());
        }
        if !g.is_finite() {
            bail!(Numeric, "parameter {i}: non-finite gradient");
        }
    }
    Ok(())
}

/// One bias-corrected Adam update. Leaves everything untouched on error.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    check_grads(params, grads)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        bail!(Dimension, "optimizer state tracks {} tensors, got {}", state.m.len(), params.len());
    }
    let t = state.t + 1;
    let c1 = 1.0 - hyper.beta1.powi(t as i32);
    let c2 = 1.0 - hyper.beta2.powi(t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if m.shape() != p.shape() || v.shape() != p.shape() {
            bail!(Dimension, "optimizer moment shape {:?} vs parameter {:?}", m.shape(), p.shape());
        }
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            let gi = gi.as_f64();
            let mi = hyper.beta1 * md[i].as_f64() + (1.0 - hyper.beta1) * gi;
            let vi = hyper.beta2 * vd[i].as_f64() + (1.0 - hyper.beta2) * gi * gi;
            md[i] = T::from_f64(mi);
            vd[i] = T::from_f64(vi);
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + hyper.eps);
            pd[i] = T::from_f64(pd[i].as_f64() - step);
        }
    }
    state.t = t;
    Ok(())
}

/// Plain gradient descent: `p -= lr * g`.
pub fn sgd_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
    check_grads(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, &gi) in p.data_mut().iter_mut().zip(g.data()) {
            *pi = T::from_f64(pi.as_f64() - lr * gi.as_f64());
        }
    }
    Ok(())
}
