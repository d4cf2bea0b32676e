//! AdamW with decoupled weight decay, and cosine learning-rate annealing.

use std::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWParams {
    pub fn with_weight_decay(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One update of a flat parameter slice at step `t` (1-based): first
/// `p *= 1 - lr * wd`, then the bias-corrected Adam step.
pub fn adamw_step(
    p: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hp: AdamWParams,
) -> Result<()> {
    let n = p.len();
    if grad.len() != n || m.len() != n || v.len() != n {
        return Err(Error::shape(
            "adamw_step",
            format!(
                "param {n}, grad {}, m {}, v {}",
                grad.len(),
                m.len(),
                v.len()
            ),
        ));
    }
    if t == 0 {
        return Err(Error::invalid("adamw step count starts at 1"));
    }
    let decay = 1.0 - lr * hp.weight_decay;
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    for i in 0..n {
        p[i] *= decay;
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// `lr_min + (lr_peak - lr_min) * (1 + cos(pi * step / total_steps)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_peak: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!("step {step} beyond {total_steps}")));
    }
    let c = (PI * step as f64 / total_steps as f64).cos();
    // The clamp absorbs rounding at step 0 without breaking monotonicity.
    Ok((lr_min + 0.5 * (lr_peak - lr_min) * (1.0 + c)).min(lr_peak))
}

/// Moments for every parameter of a [`ParamStore`], in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub hp: AdamWParams,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, hp: AdamWParams) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            hp,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Updates every parameter that has `Some` gradient; `None` entries
    /// (frozen parameters) are left untouched along with their moments.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape(
                "adamw",
                format!(
                    "{} grads, {} moments for {} parameters",
                    grads.len(),
                    self.m.len(),
                    store.len()
                ),
            ));
        }
        self.t += 1;
        for (i, (_, p)) in store.iter_mut().enumerate() {
            if let Some(g) = &grads[i] {
                adamw_step(
                    p.data_mut(),
                    g.data(),
                    self.m[i].data_mut(),
                    self.v[i].data_mut(),
                    self.t,
                    lr,
                    self.hp,
                )?;
            }
        }
        Ok(())
    }
}
