use serde::{Deserialize, Serialize};

use super::matrix::Scalar;
use super::model::{GcnModel, ParamGrads};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer with its per-parameter state. Weight decay (L2, added to the
/// gradient) applies to W1 only.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, model: &GcnModel<T>) -> Self {
        let zeros = || model.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self { kind, lr, weight_decay, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut GcnModel<T>, grads: &ParamGrads<T>) {
        self.step += 1;
        let lr = T::from_real(self.lr);
        let wd = T::from_real(self.weight_decay);
        let t = self.step as i32;
        let bc1 = T::from_real(1.0 - BETA1.powi(t));
        let bc2 = T::from_real(1.0 - BETA2.powi(t));
        let (b1, b2, eps) = (T::from_real(BETA1), T::from_real(BETA2), T::from_real(EPS));
        let one = T::one();
        for (k, (theta, g)) in model.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            let decay = if k == 0 { wd } else { T::zero() };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &g) in theta.iter_mut().zip(g) {
                        *p = *p - lr * (g + decay * *p);
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..theta.len() {
                        let g = g[i] + decay * theta[i];
                        m[i] = b1 * m[i] + (one - b1) * g;
                        v[i] = b2 * v[i] + (one - b2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        theta[i] = theta[i] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
