//! Actor and critic networks, Adam, and parameter blending.

mod mlp;

use serde::{Deserialize, Serialize};

pub use mlp::{batch, row, soft_blend, Dense, ForwardCache, Mlp};

use crate::domain::{ActionMask, Observation, NUM_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};

/// Logit offset for masked actions.
pub const MASK_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden_gain: f64,
    pub actor_output_gain: f64,
    pub critic_output_gain: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![128, 128],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden_gain: 1.0,
            actor_output_gain: 0.01,
            critic_output_gain: 1.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn actor_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM];
        s.extend(&self.hidden);
        s.push(NUM_ACTIONS);
        s
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

/// Softmax over `logits` with masked entries forced to exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Contract("every action is masked".into()));
    }
    let shifted: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { z } else { z + MASK_LOGIT })
        .collect();
    let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = shifted
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { (z - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Action distribution of the policy network at `obs` under `mask`.
pub fn forward_policy(
    actor: &Mlp,
    obs: &Observation,
    mask: &ActionMask,
) -> Result<[f64; NUM_ACTIONS]> {
    let logits = actor.forward_one(obs.as_slice());
    let p = masked_softmax(&logits, &mask.0)?;
    Ok([p[0], p[1], p[2]])
}

pub fn forward_value(critic: &Mlp, obs: &Observation) -> f64 {
    critic.forward_one(obs.as_slice())[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Mlp,
    pub v: Mlp,
}

impl Adam {
    pub fn new(params: &Mlp, lr: f64) -> Self {
        Adam {
            config: AdamConfig::with_lr(lr),
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Zero the moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m = self.m.zeros_like();
        self.v = self.v.zeros_like();
    }

    /// One descent step along `grads`.
    pub fn update(&mut self, params: &mut Mlp, grads: &Mlp) -> Result<()> {
        if !grads.same_shape(params) || !self.m.same_shape(params) {
            return Err(Error::Contract(
                "gradient shape does not match parameters".into(),
            ));
        }
        if let Some((i, g)) = grads.params().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient {g} at parameter {i} (adam step {})",
                self.step
            )));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        self.m
            .zip_apply(grads, |m, g| *m = beta1 * *m + (1.0 - beta1) * g);
        self.v
            .zip_apply(grads, |v, g| *v = beta2 * *v + (1.0 - beta2) * g * g);
        for (layer, (m, v)) in params
            .layers
            .iter_mut()
            .zip(self.m.layers.iter().zip(&self.v.layers))
        {
            ndarray::Zip::from(&mut layer.weight)
                .and(&m.weight)
                .and(&v.weight)
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
            ndarray::Zip::from(&mut layer.bias)
                .and(&m.bias)
                .and(&v.bias)
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
        }
        Ok(())
    }
}
