use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::textgen::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    MomentumSgd,
}

/// Per-parameter optimizer state, laid out like [`ParamSet::tensors`].
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            second: if cfg.optimizer == OptimizerKind::Adam { zeros.clone() } else { Vec::new() },
            first: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grad: &ParamSet) {
        self.t += 1;
        let grads = grad.tensors();
        match self.kind {
            OptimizerKind::Adam => {
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for (i, p) in params.tensors_mut().into_iter().enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (k, w) in p.data.iter_mut().enumerate() {
                        let g = grads[i].data[k];
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                        *w -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                    }
                }
            }
            OptimizerKind::MomentumSgd => {
                for (i, p) in params.tensors_mut().into_iter().enumerate() {
                    let vel = &mut self.first[i];
                    for (k, w) in p.data.iter_mut().enumerate() {
                        vel[k] = self.momentum * vel[k] - self.lr * grads[i].data[k];
                        *w += vel[k];
                    }
                }
            }
        }
    }
}
