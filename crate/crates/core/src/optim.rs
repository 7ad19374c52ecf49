//! AdamW with decoupled weight decay, plus the cosine learning-rate schedule.

use crate::backbone::ParamSet;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Optimizer hyperparameters. Only the weight decay departs from the Adam
/// defaults; the decay is applied directly to parameters, never through the
/// moments.
#[derive(Debug, Clone, Copy)]
pub struct OptimHyper {
    pub lr_base: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        OptimHyper {
            lr_base: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.2,
        }
    }
}

/// Per-parameter first/second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimState<E> {
    pub step: u64,
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
}

impl<E: Real> OptimState<E> {
    pub fn new(params: &ParamSet<E>) -> Self {
        let zeros: Vec<Tensor<E>> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        OptimState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn from_parts(step: u64, m: Vec<Tensor<E>>, v: Vec<Tensor<E>>) -> Self {
        OptimState { step, m, v }
    }
}

/// One AdamW update over every parameter. A non-finite gradient rejects the
/// whole step (parameters and moments untouched), naming the parameter.
pub fn adamw_step<E: Real>(
    params: &mut ParamSet<E>,
    grads: &[Tensor<E>],
    state: &mut OptimState<E>,
    hyper: &OptimHyper,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Contract(format!(
            "adamw_step: {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (name, g) in params.names().iter().zip(grads) {
        if !g.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient for parameter {name} is not finite; step rejected"
            )));
        }
    }
    let t = state.step + 1;
    let b1 = E::from_f64(hyper.beta1);
    let b2 = E::from_f64(hyper.beta2);
    let one_m_b1 = E::from_f64(1.0 - hyper.beta1);
    let one_m_b2 = E::from_f64(1.0 - hyper.beta2);
    let bc1 = E::from_f64(1.0 - hyper.beta1.powi(t as i32));
    let bc2 = E::from_f64(1.0 - hyper.beta2.powi(t as i32));
    let eps = E::from_f64(hyper.eps);
    let lr_e = E::from_f64(lr);
    let decay = E::from_f64(lr * hyper.weight_decay);

    for i in 0..params.len() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.tensors_mut()[i].data_mut();
        for j in 0..g.len() {
            m[j] = b1 * m[j] + one_m_b1 * g[j];
            v[j] = b2 * v[j] + one_m_b2 * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = p[j] - lr_e * m_hat / (v_hat.sqrt() + eps) - decay * p[j];
        }
    }
    state.step = t;
    Ok(())
}

/// Cosine decay from `lr_base` at step 0 to 0 at `total_steps`; no warmup,
/// clamps to 0 past the end.
pub fn cosine_lr(step: u64, total_steps: u64, lr_base: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return 0.0;
    }
    let frac = step as f64 / total_steps as f64;
    lr_base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}
