//! First-order optimizers with per-parameter adaptive learning rates.
//!
//! All three variants share the same moment-estimate machinery and differ
//! only in how weight decay enters and in how the second moment is used:
//!
//! * `Adam` applies decay, if any, by adding `wd * theta` to the gradient.
//! * `AdamW` decays the parameter directly, decoupled from the moments.
//! * `RAdam` rectifies the adaptive step once the variance estimate has
//!   seen enough samples, and falls back to a plain momentum step before
//!   that point.

use serde::{Deserialize, Serialize};

use crate::numerics::matrix::Matrix;
use crate::numerics::params::{Gradients, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    AdamW,
    #[default]
    RAdam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerConfig {
            kind,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: match kind {
                OptimizerKind::AdamW => 0.01,
                _ => 0.0,
            },
        }
    }

    pub fn adam() -> Self {
        Self::new(OptimizerKind::Adam)
    }

    pub fn adamw() -> Self {
        Self::new(OptimizerKind::AdamW)
    }

    pub fn radam() -> Self {
        Self::new(OptimizerKind::RAdam)
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::radam()
    }
}

/// Optimizer state: step counter plus first and second moment estimates,
/// one matrix per parameter tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &ParamSet) -> Self {
        let m = params
            .iter()
            .map(|(_, t)| Matrix::zeros(t.rows(), t.cols()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Optimizer { cfg, step: 0, m, v }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Gradients must come from the same
    /// parameter set the optimizer was built for.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);

        // RAdam rectification term, constant across parameters for a step
        let rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t as f64 * c.beta2.powi(t) / bias2;
        let rect = if rho_t > 4.0 {
            Some(
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };

        for (idx, id) in params.ids().enumerate() {
            let g_tensor = grads.get(id).as_slice();
            let theta = params.get_mut(id).as_mut_slice();
            let m = self.m[idx].as_mut_slice();
            let v = self.v[idx].as_mut_slice();
            for (j, th) in theta.iter_mut().enumerate() {
                let mut g = g_tensor[j];
                match c.kind {
                    OptimizerKind::Adam | OptimizerKind::RAdam => {
                        if c.weight_decay != 0.0 {
                            g += c.weight_decay * *th;
                        }
                    }
                    OptimizerKind::AdamW => {
                        *th -= c.lr * c.weight_decay * *th;
                    }
                }
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bias1;
                match c.kind {
                    OptimizerKind::Adam | OptimizerKind::AdamW => {
                        let v_hat = v[j] / bias2;
                        *th -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                    OptimizerKind::RAdam => match rect {
                        Some(r) => {
                            let v_hat = (v[j] / bias2).sqrt();
                            *th -= c.lr * r * m_hat / (v_hat + c.eps);
                        }
                        None => *th -= c.lr * m_hat,
                    },
                }
            }
        }
    }
}
