//! Bias-corrected Adam.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
/// Moment tensors are kept in the same order as the parameter list the
/// state was created for.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub hyper: AdamHyper,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], hyper: AdamHyper) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState { hyper, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)` with the
    /// standard bias corrections. Deterministic given inputs.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam: state holds {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), i) in params.iter().zip(grads).zip(0..) {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::Dimension(format!(
                    "adam: tensor {i} shapes {:?} / {:?} / {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powf(t);
        let bc2 = 1.0 - h.beta2.powf(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for ((pv, &gv), (mv, vv)) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
                *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}
