use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd { momentum: 0.9 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerConfig::Sgd { momentum } if (0.0..1.0).contains(&momentum) => Ok(()),
            OptimizerConfig::Adam { beta1, beta2, eps }
                if (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 =>
            {
                Ok(())
            }
            _ => Err(Error::config(format!("invalid optimizer settings {self:?}"))),
        }
    }
}

/// Optimizer moments, one tensor per parameter in `Params` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub steps: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| p.zeros_like()).collect();
        let second = match config {
            OptimizerConfig::Adam { .. } => zeros(),
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Optimizer {
            config,
            state: OptimizerState {
                steps: 0,
                first: zeros(),
                second,
            },
        }
    }

    /// One update of `params` with `grads`, both in `Params` order.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[&Tensor], lr: f64) {
        self.state.steps += 1;
        let t = self.state.steps as i32;
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.state.first[i].data;
            match self.config {
                OptimizerConfig::Sgd { momentum } => {
                    for ((w, &gi), mi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()) {
                        *mi = momentum * *mi + gi;
                        *w -= lr * *mi;
                    }
                }
                OptimizerConfig::Adam { beta1, beta2, eps } => {
                    let v = &mut self.state.second[i].data;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((w, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: Vec<&mut Tensor>, max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.scale(s);
        }
    }
    norm
}
