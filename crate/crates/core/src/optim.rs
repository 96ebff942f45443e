//! First-order optimizers over [`NetworkParams`] tensors.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ImbError, Result};
use crate::net::{Gradients, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adagrad,
    Adadelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Adam first-moment decay.
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    /// Adam second-moment decay.
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Adadelta decay.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Denominator offset; `None` picks 1e-8 (adam), 1e-10 (adagrad) or 1e-6 (adadelta).
    #[serde(default)]
    pub epsilon: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_rho() -> f64 {
    0.95
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            rho: default_rho(),
            epsilon: None,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn eps(&self) -> f64 {
        self.epsilon.unwrap_or(match self.kind {
            OptimizerKind::Sgd | OptimizerKind::Adam => 1e-8,
            OptimizerKind::Adagrad => 1e-10,
            OptimizerKind::Adadelta => 1e-6,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            Config,
            "learning_rate must be finite and >= 0, got {}",
            self.learning_rate
        );
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("rho", self.rho)] {
            ensure!((0.0..1.0).contains(&v), Config, "{} must lie in [0, 1), got {}", name, v);
        }
        ensure!(self.eps() > 0.0, Config, "epsilon must be positive");
        Ok(())
    }
}

/// Per-tensor moment buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_buffers(&mut self, params: &NetworkParams) {
        if self.first.is_empty() {
            self.first = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
    }
}

/// One update. Tensors with `frozen[t] == true` are left untouched, moments included.
pub fn optimizer_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    frozen: Option<&[bool]>,
) -> Result<()> {
    ensure!(params.same_shape(grads), Contract, "gradient shape does not match parameters");
    for (t, name) in grads.tensors().into_iter().zip(grads.tensor_names()) {
        if let Some(i) = t.iter().position(|v| !v.is_finite()) {
            return Err(ImbError::Numeric(format!("non-finite gradient {} at {}[{}]", t[i], name, i)));
        }
    }
    state.ensure_buffers(params);
    state.step += 1;
    let lr = cfg.learning_rate;
    let eps = cfg.eps();
    let step = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(step);
    let bias2 = 1.0 - cfg.beta2.powi(step);
    let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
    for (t, (theta, g)) in tensors.enumerate() {
        if frozen.is_some_and(|f| f[t]) {
            continue;
        }
        let (m, v) = (&mut state.first[t], &mut state.second[t]);
        for i in 0..theta.len() {
            let gi = g[i];
            match cfg.kind {
                OptimizerKind::Sgd => theta[i] -= lr * gi,
                OptimizerKind::Adam => {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                    theta[i] -= lr * (m[i] / bias1) / ((v[i] / bias2).sqrt() + eps);
                }
                OptimizerKind::Adagrad => {
                    v[i] += gi * gi;
                    theta[i] -= lr * gi / (v[i].sqrt() + eps);
                }
                OptimizerKind::Adadelta => {
                    // v: running E[g^2], m: running E[dx^2]
                    v[i] = cfg.rho * v[i] + (1.0 - cfg.rho) * gi * gi;
                    let dx = -((m[i] + eps).sqrt() / (v[i] + eps).sqrt()) * gi;
                    m[i] = cfg.rho * m[i] + (1.0 - cfg.rho) * dx * dx;
                    theta[i] += lr * dx;
                }
            }
        }
    }
    Ok(())
}
