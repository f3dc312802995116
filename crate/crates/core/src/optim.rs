//! First-order optimizers over the flat parameter vector.
//!
//! The gradient contract is untouched: trainers hand an exact gradient to
//! `ascend`/`descend`, and the update rule is the only thing that varies.
//! State is created per training stage and never crosses a checkpoint
//! boundary, so resumed runs see the same updates as uninterrupted ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain SGD at a fixed learning rate.
    Sgd,
    /// SGD with heavy-ball momentum 0.9.
    Momentum,
    /// Adam (0.9, 0.999, 1e-8).
    Adam,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer {other:?}"))),
        }
    }
}

const MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Optimizer {
        let state = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Momentum => param_count,
            OptimizerKind::Adam => param_count,
        };
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            m: vec![0.0; state],
            v: if kind == OptimizerKind::Adam { vec![0.0; param_count] } else { Vec::new() },
        }
    }

    /// Gradient-descent step on a loss gradient.
    pub fn descend(&mut self, params: &mut PolicyParams, grad: &[f64]) -> Result<()> {
        self.apply(params, grad, -1.0)
    }

    /// Gradient-ascent step on an objective gradient.
    pub fn ascend(&mut self, params: &mut PolicyParams, grad: &[f64]) -> Result<()> {
        self.apply(params, grad, 1.0)
    }

    fn apply(&mut self, params: &mut PolicyParams, grad: &[f64], direction: f64) -> Result<()> {
        if grad.len() != params.flat.len() {
            return Err(Error::integrity("gradient length mismatch in optimizer step"));
        }
        self.step += 1;
        let lr = self.learning_rate * direction;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.flat.iter_mut().zip(grad) {
                    *p += lr * g;
                }
            }
            OptimizerKind::Momentum => {
                for ((p, &g), m) in params.flat.iter_mut().zip(grad).zip(self.m.iter_mut()) {
                    *m = MOMENTUM * *m + g;
                    *p += lr * *m;
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for (((p, &g), m), v) in params
                    .flat
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p += lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        params.assert_finite()
    }
}
