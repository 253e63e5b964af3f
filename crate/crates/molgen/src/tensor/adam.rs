//! Bias-corrected adaptive-moment optimizer.

use serde::{Deserialize, Serialize};

use super::array::NDArray;
use super::{Scalar, TensorError};

/// Optimizer state: one pair of moment accumulators per parameter array,
/// in the same order as the parameter list it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<NDArray<T>>,
    v: Vec<NDArray<T>>,
}

impl<T: Scalar + Serialize> AdamState<T> {
    /// Fresh state (zero moments) shaped after `params`, with standard
    /// moment decays β₁ = 0.9, β₂ = 0.999 and ε = 1e-8.
    pub fn new(lr: T, params: &[NDArray<T>]) -> Self {
        AdamState {
            lr,
            beta1: T::from_f64_c(0.9),
            beta2: T::from_f64_c(0.999),
            eps: T::from_f64_c(1e-8),
            step: 0,
            m: params.iter().map(|p| NDArray::zeros(p.shape())).collect(),
            v: params.iter().map(|p| NDArray::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(
        &mut self,
        params: &mut [&mut NDArray<T>],
        grads: &[NDArray<T>],
    ) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        for ((p, g), (m, v)) in params.iter().zip(grads).zip(self.m.iter().zip(&self.v)) {
            if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        for i in 0..params.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            let g = grads[i].data();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (one - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (one - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
