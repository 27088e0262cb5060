//! Adam optimizer with bias-corrected moment estimates.
//!
//! Weight decay enters as an additive `λ·θ` term in the gradient before the
//! moment updates (classic L2 penalty semantics, not decoupled from the
//! moments), and applies uniformly to every parameter.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::store::TensorStore;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Per-parameter first and second moment buffers plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
    cfg: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &TensorStore<S>, cfg: AdamConfig) -> Self {
        let m = store.entries().iter().map(|e| vec![S::zero(); e.data.len()]).collect();
        let v = store.entries().iter().map(|e| vec![S::zero(); e.data.len()]).collect();
        AdamState { m, v, step: 0, cfg }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in `store`, with `grads` aligned to
    /// the store's entry order.
    pub fn step(&mut self, store: &mut TensorStore<S>, grads: &[Vec<S>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract(format!(
                "gradient count {} does not match parameter count {}",
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.cfg.beta2);
        let corr1 = S::from_f64(1.0 - self.cfg.beta1.powi(t));
        let corr2 = S::from_f64(1.0 - self.cfg.beta2.powi(t));
        let eps = S::from_f64(self.cfg.eps);
        let wd = S::from_f64(self.cfg.weight_decay);
        let lr = S::from_f64(lr);

        for (p, grad) in grads.iter().enumerate() {
            let entry = store.entry_mut(p);
            if grad.len() != entry.data.len() {
                return Err(Error::Dimension(format!(
                    "gradient for {:?} has {} elements, parameter has {}",
                    entry.name,
                    grad.len(),
                    entry.data.len()
                )));
            }
            let (m, v) = (&mut self.m[p], &mut self.v[p]);
            for i in 0..grad.len() {
                let g = grad[i] + wd * entry.data[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                entry.data[i] = entry.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
