//! Exact Shapley attribution of policy outputs to observation features.
//!
//! Coalition values use interventional replacement: features in the
//! coalition come from the instance, the rest from each background row, and
//! the model output is averaged over the background.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::approximator::{masked_softmax, Mlp};
use crate::domain::{Action, Observation, FEATURE_NAMES, NUM_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};

/// Anything that maps a batch of rows to one scalar per row.
pub trait BatchModel {
    fn eval_batch(&self, x: ArrayView2<'_, f64>) -> Vec<f64>;
}

impl<F> BatchModel for F
where
    F: Fn(&[f64]) -> f64,
{
    fn eval_batch(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self(&r.to_vec())).collect()
    }
}

/// Probability of one action under the unmasked policy head.
#[derive(Debug, Clone, Copy)]
pub struct ActionProbability<'a> {
    pub actor: &'a Mlp,
    pub action: Action,
}

impl BatchModel for ActionProbability<'_> {
    fn eval_batch(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let logits = self.actor.forward(x);
        let a = self.action.index();
        logits
            .rows()
            .into_iter()
            .map(|r| {
                masked_softmax(r.as_slice().expect("contiguous"), &[true; NUM_ACTIONS])
                    .expect("full mask")[a]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub instance: Vec<f64>,
    /// Mean model output over the background.
    pub base_value: f64,
    /// Model output at the instance.
    pub output: f64,
    pub phi: Vec<f64>,
}

impl Attribution {
    /// |base + Σφ − output|.
    pub fn efficiency_gap(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.output).abs()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Shapley values of every feature of `instance` against `background`.
pub fn exact_shapley<M: BatchModel + ?Sized>(
    model: &M,
    instance: &[f64],
    background: &[Vec<f64>],
) -> Result<Attribution> {
    if background.is_empty() {
        return Err(Error::Contract(
            "Shapley attribution needs a nonempty background set".into(),
        ));
    }
    let n = instance.len();
    if n > 20 {
        return Err(Error::Contract(format!(
            "{n} features is too many for exact enumeration"
        )));
    }
    if let Some(row) = background.iter().find(|r| r.len() != n) {
        return Err(Error::Contract(format!(
            "background row has {} features, instance has {n}",
            row.len()
        )));
    }
    let m = background.len();
    let coalitions = 1usize << n;
    let mut value = vec![0.0; coalitions];
    let mut x = Array2::<f64>::zeros((m, n));
    for (s, v) in value.iter_mut().enumerate() {
        for (i, row) in background.iter().enumerate() {
            for f in 0..n {
                x[[i, f]] = if s >> f & 1 == 1 { instance[f] } else { row[f] };
            }
        }
        *v = model.eval_batch(x.view()).iter().sum::<f64>() / m as f64;
    }
    let total = factorial(n);
    let weight: Vec<f64> = (0..n)
        .map(|k| factorial(k) * factorial(n - k - 1) / total)
        .collect();
    let mut phi = vec![0.0; n];
    for (s, &v_s) in value.iter().enumerate() {
        let size = s.count_ones() as usize;
        for (f, p) in phi.iter_mut().enumerate() {
            if s >> f & 1 == 0 {
                *p += weight[size] * (value[s | 1 << f] - v_s);
            }
        }
    }
    Ok(Attribution {
        instance: instance.to_vec(),
        base_value: value[0],
        output: value[coalitions - 1],
        phi,
    })
}

/// Attribution of one action's probability for a policy.
pub fn explain_action(
    actor: &Mlp,
    action: Action,
    instance: &Observation,
    background: &[Observation],
) -> Result<Attribution> {
    if action == Action::Reject {
        return Err(Error::Contract(
            "attribution covers the booking actions only".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = background.iter().map(|o| o.0.to_vec()).collect();
    exact_shapley(&ActionProbability { actor, action }, &instance.0, &rows)
}

/// Per-feature summary over a set of attributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub action: usize,
    pub feature_name: String,
    pub mean_phi: f64,
    pub mean_abs_phi: f64,
    /// Sign of the correlation between the feature value and its φ
    /// (0 when either is constant).
    pub value_phi_corr_sign: i8,
}

fn correlation_sign(xs: &[f64], ys: &[f64]) -> i8 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if vx <= 0.0 || vy <= 0.0 || cov == 0.0 {
        0
    } else if cov > 0.0 {
        1
    } else {
        -1
    }
}

/// Summary rows for `action`, one per observation feature.
pub fn summarize_attributions(
    action: Action,
    attributions: &[Attribution],
) -> Result<Vec<FeatureSummary>> {
    if attributions.is_empty() {
        return Err(Error::Contract("no attributions to summarize".into()));
    }
    let k = attributions.len() as f64;
    Ok((0..OBS_DIM)
        .map(|f| {
            let values: Vec<f64> = attributions.iter().map(|a| a.instance[f]).collect();
            let phis: Vec<f64> = attributions.iter().map(|a| a.phi[f]).collect();
            FeatureSummary {
                action: action.index(),
                feature_name: FEATURE_NAMES[f].to_string(),
                mean_phi: phis.iter().sum::<f64>() / k,
                mean_abs_phi: phis.iter().map(|p| p.abs()).sum::<f64>() / k,
                value_phi_corr_sign: correlation_sign(&values, &phis),
            }
        })
        .collect())
}

/// Rank (0 = largest) of `feature` by mean |φ|.
pub fn importance_rank(summary: &[FeatureSummary], feature: &str) -> Option<usize> {
    let target = summary
        .iter()
        .find(|s| s.feature_name == feature)?
        .mean_abs_phi;
    Some(summary.iter().filter(|s| s.mean_abs_phi > target).count())
}
