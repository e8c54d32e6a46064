//! PPO losses with analytic gradients.

use ndarray::{Array2, ArrayView2};

use crate::approximator::{masked_softmax, Mlp};
use crate::domain::{Action, ActionMask, NUM_ACTIONS};

/// Samples for one actor gradient step.
#[derive(Debug, Clone, Copy)]
pub struct ActorBatch<'a> {
    pub observations: ArrayView2<'a, f64>,
    pub masks: &'a [ActionMask],
    pub actions: &'a [Action],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorLoss {
    /// Minimized objective: `-surrogate - entropy_coef * entropy`.
    pub total: f64,
    /// Mean clipped surrogate (maximized).
    pub surrogate: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

/// Clipped surrogate for one sample: `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Entropy of a distribution, treating `0 log 0` as 0.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Mean actor loss over the batch and its gradient.
pub fn actor_loss(
    actor: &Mlp,
    batch: &ActorBatch<'_>,
    clip: f64,
    entropy_coef: f64,
) -> (ActorLoss, Mlp) {
    let n = batch.actions.len();
    let (logits, cache) = actor.forward_cached(batch.observations);
    let mut grad = Array2::<f64>::zeros((n, NUM_ACTIONS));
    let mut stats = ActorLoss::default();
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = logits.row(i);
        let p = masked_softmax(
            row.as_slice().expect("contiguous logits"),
            &batch.masks[i].0,
        )
        .expect("recorded masks always allow an action");
        let a = batch.actions[i].index();
        let log_p = p[a].ln();
        let ratio = (log_p - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let h = entropy(&p);

        stats.surrogate += clipped_objective(ratio, adv, clip);
        stats.entropy += h;
        stats.mean_ratio += ratio;
        if (ratio - 1.0).abs() > clip {
            stats.clip_fraction += 1.0;
        }

        // d surrogate / d log p_a is r A on the unclipped branch, else 0.
        let clipped_out = (adv > 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip);
        let d_logp = if clipped_out { 0.0 } else { ratio * adv };
        for j in 0..NUM_ACTIONS {
            let onehot = if j == a { 1.0 } else { 0.0 };
            let d_surr = d_logp * (onehot - p[j]);
            let d_ent = if p[j] > 0.0 {
                -p[j] * (p[j].ln() + h)
            } else {
                0.0
            };
            grad[[i, j]] = (-d_surr - entropy_coef * d_ent) * inv_n;
        }
    }
    stats.surrogate *= inv_n;
    stats.entropy *= inv_n;
    stats.mean_ratio *= inv_n;
    stats.clip_fraction *= inv_n;
    stats.total = -stats.surrogate - entropy_coef * stats.entropy;
    let grads = actor.backward(&cache, grad.view());
    (stats, grads)
}

/// `value_coef * mean((V - target)^2)` and its gradient.
pub fn critic_loss(
    critic: &Mlp,
    observations: ArrayView2<'_, f64>,
    targets: &[f64],
    value_coef: f64,
) -> (f64, Mlp) {
    let n = targets.len();
    let (values, cache) = critic.forward_cached(observations);
    let mut grad = Array2::<f64>::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let err = values[[i, 0]] - targets[i];
        loss += err * err;
        grad[[i, 0]] = 2.0 * value_coef * err / n as f64;
    }
    (
        value_coef * loss / n as f64,
        critic.backward(&cache, grad.view()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_examples() {
        assert_eq!(clipped_objective(1.5, 1.0, 0.2), 1.2);
        assert!((clipped_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_objective(1.0, 3.0, 0.2), 3.0);
    }

    #[test]
    fn objective_is_a_lower_bound() {
        for r in [0.1, 0.5, 0.79, 0.8, 1.0, 1.19, 1.2, 1.7, 4.0] {
            for a in [-2.0, -0.5, 0.0, 0.5, 2.0] {
                assert!(clipped_objective(r, a, 0.2) <= r * a + 1e-15);
            }
        }
    }

    #[test]
    fn entropy_ignores_zero_mass() {
        assert_eq!(entropy(&[0.0, 0.0, 1.0]), 0.0);
        assert!((entropy(&[0.5, 0.5, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
