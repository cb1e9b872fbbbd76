use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Network;
use crate::real::Real;

use super::backward::Gradients;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("optimizer must be sgd or adam, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Sentences held out of the training file for per-epoch validation.
    pub n_val: usize,
    /// Divide the summed class scores by `T` inside the loss.
    pub normalize_by_steps: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-4,
            epochs: 50,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            n_val: 150,
            normalize_by_steps: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        // zero is allowed: it freezes the parameters
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates, one vector per named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(net: &Network<F>) -> Self {
        let zeros: Vec<Vec<F>> = net
            .named_params()
            .iter()
            .map(|(_, _, p)| vec![F::zero(); p.len()])
            .collect();
        OptimizerState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Applies one update in place. Refuses to touch the network if any
/// gradient is non-finite.
pub fn optimizer_step<F: Real>(
    net: &mut Network<F>,
    grads: &Gradients<F>,
    state: &mut OptimizerState<F>,
    cfg: &TrainConfig,
) -> Result<()> {
    if let Some(bad) = grads
        .entries
        .iter()
        .find(|e| e.values.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numeric(format!("non-finite gradient in {}", bad.name)));
    }
    let mut params = net.named_params_mut();
    if params.len() != grads.entries.len() || params.len() != state.m.len() {
        return Err(Error::Dimension("gradients do not match the network".into()));
    }
    let lr = F::lit(cfg.learning_rate);
    state.step += 1;
    let (b1, b2) = (F::lit(cfg.beta1), F::lit(cfg.beta2));
    let bc1 = F::one() - F::lit(cfg.beta1.powi(state.step as i32));
    let bc2 = F::one() - F::lit(cfg.beta2.powi(state.step as i32));
    let eps = F::lit(cfg.eps);
    for (i, ((name, _, p), g)) in params.iter_mut().zip(&grads.entries).enumerate() {
        if *name != g.name || p.len() != g.values.len() {
            return Err(Error::Dimension(format!("gradient for {} does not match {name}", g.name)));
        }
        match cfg.optimizer {
            OptimizerKind::Sgd => {
                for (w, &d) in p.iter_mut().zip(&g.values) {
                    *w -= lr * d;
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = (&mut state.m[i], &mut state.v[i]);
                for j in 0..p.len() {
                    let d = g.values[j];
                    m[j] = b1 * m[j] + (F::one() - b1) * d;
                    v[j] = b2 * v[j] + (F::one() - b2) * d * d;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
