//! SGD and Adam with an epoch-level learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    HalveEveryKEpochs { k: usize },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::HalveEveryKEpochs { k } => base * 0.5f64.powi((epoch / k.max(1)) as i32),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, schedule: LrSchedule) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if let LrSchedule::HalveEveryKEpochs { k: 0 } = schedule {
            return Err(Error::config("halving period must be at least one epoch"));
        }
        Ok(OptimizerState {
            kind,
            base_lr: learning_rate,
            learning_rate,
            schedule,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate, LrSchedule::Constant)
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, LrSchedule::Constant)
    }

    /// Apply the schedule; call at epoch boundaries only.
    pub fn start_epoch(&mut self, epoch: usize) {
        self.learning_rate = self.schedule.lr_at(self.base_lr, epoch);
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract("optimizer step: parameter/gradient count mismatch"));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::contract(format!("optimizer step: param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first_moment.is_empty() {
                    self.first_moment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                    self.second_moment = self.first_moment.clone();
                } else if self.first_moment.len() != params.len() {
                    return Err(Error::contract("adam moment buffers do not match the parameter list"));
                }
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in
                    params.iter_mut().zip(grads).zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
                {
                    let (m, v) = (m.data_mut(), v.data_mut());
                    for (i, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * d;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * d * d;
                        *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric { op: "optimizer_step", detail: "parameters diverged".into() });
        }
        Ok(())
    }

    pub fn moment_shapes(&self) -> Vec<Vec<usize>> {
        self.first_moment.iter().map(|m| m.shape().to_vec()).collect()
    }
}
