//! Synthetic no-show probability providers.
//!
//! Stands in for a trained attendance model: either a Beta draw that ignores
//! the patient features or a fixed logistic model over them.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    BetaSampler,
    LogisticSynthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub beta_a: f64,
    pub beta_b: f64,
    /// Length `feature_dim`; all zeros when absent.
    pub logistic_weights: Option<Vec<f64>>,
    pub logistic_bias: f64,
    pub feature_dim: usize,
    /// Additive shift in probability points applied to every prediction.
    pub perturbation_delta: f64,
    /// When true the shifted probability also drives realized attendance;
    /// otherwise only the decision maker sees the shift.
    pub perturb_attendance: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            kind: PredictorKind::BetaSampler,
            beta_a: 2.0,
            beta_b: 3.0,
            logistic_weights: None,
            logistic_bias: 0.0,
            feature_dim: 8,
            perturbation_delta: 0.0,
            perturb_attendance: true,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_a > 0.0 && self.beta_b > 0.0) {
            return Err(Error::Config(format!(
                "beta parameters must be positive, got ({}, {})",
                self.beta_a, self.beta_b
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if let Some(w) = &self.logistic_weights {
            if w.len() != self.feature_dim {
                return Err(Error::Config(format!(
                    "logistic_weights has {} entries, feature_dim is {}",
                    w.len(),
                    self.feature_dim
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("logistic_weights must be finite".into()));
            }
        }
        if !self.logistic_bias.is_finite() {
            return Err(Error::Config("logistic_bias must be finite".into()));
        }
        if !(-1.0..=1.0).contains(&self.perturbation_delta) {
            return Err(Error::Config(format!(
                "perturbation_delta {} outside [-1, 1]",
                self.perturbation_delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Model {
    Beta(Beta<f64>),
    Logistic { weights: Vec<f64>, bias: f64 },
}

#[derive(Debug, Clone)]
pub struct Predictor {
    model: Model,
    feature_dim: usize,
}

impl Predictor {
    pub fn new(config: &PredictorConfig) -> Result<Self> {
        config.validate()?;
        let model = match config.kind {
            PredictorKind::BetaSampler => Model::Beta(
                Beta::new(config.beta_a, config.beta_b)
                    .map_err(|e| Error::Config(format!("beta distribution: {e}")))?,
            ),
            PredictorKind::LogisticSynthetic => Model::Logistic {
                weights: config
                    .logistic_weights
                    .clone()
                    .unwrap_or_else(|| vec![0.0; config.feature_dim]),
                bias: config.logistic_bias,
            },
        };
        Ok(Predictor {
            model,
            feature_dim: config.feature_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Predicted no-show probability for a patient. The Beta sampler draws
    /// from `rng` and ignores the features; the logistic model is
    /// deterministic.
    pub fn predict<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> f64 {
        match &self.model {
            Model::Beta(beta) => beta.sample(rng).clamp(0.0, 1.0),
            Model::Logistic { weights, bias } => {
                let z: f64 = bias
                    + weights
                        .iter()
                        .zip(features)
                        .map(|(w, x)| w * x)
                        .sum::<f64>();
                sigmoid(z)
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Shift a probability by `delta` points, clipped to [0, 1].
pub fn perturb(pi: f64, delta: f64) -> f64 {
    (pi + delta).clamp(0.0, 1.0)
}

/// Synthetic patient features: `dim` i.i.d. uniform(0, 1) draws.
pub fn sample_features<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use proptest::prelude::*;

    #[test]
    fn beta_two_three_mean_is_point_four() {
        let p = Predictor::new(&PredictorConfig::default()).unwrap();
        let mut rng = seeds::stream(1, &[99]);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = p.predict(&[], &mut rng);
            assert!((0.0..=1.0).contains(&v));
            sum += v;
        }
        let mean = sum / n as f64;
        assert!((0.395..=0.405).contains(&mean), "mean {mean}");
    }

    #[test]
    fn zero_logistic_weights_give_one_half() {
        let cfg = PredictorConfig {
            kind: PredictorKind::LogisticSynthetic,
            ..PredictorConfig::default()
        };
        let p = Predictor::new(&cfg).unwrap();
        let mut rng = seeds::stream(1, &[]);
        assert_eq!(p.predict(&[0.3; 8], &mut rng), 0.5);
    }

    #[test]
    fn perturb_examples() {
        assert!((perturb(0.40, 0.03) - 0.43).abs() < 1e-15);
        assert_eq!(perturb(0.99, 0.05), 1.0);
        assert_eq!(perturb(0.02, -0.05), 0.0);
    }

    #[test]
    fn features_are_replayable() {
        let a = sample_features(&mut seeds::stream(5, &[1]), 8);
        let b = sample_features(&mut seeds::stream(5, &[1]), 8);
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn config_validation() {
        let bad = PredictorConfig {
            beta_a: 0.0,
            ..PredictorConfig::default()
        };
        assert!(Predictor::new(&bad).is_err());
        let bad = PredictorConfig {
            logistic_weights: Some(vec![1.0; 3]),
            ..PredictorConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn logistic_outputs_stay_in_unit_interval() {
        let cfg = PredictorConfig {
            kind: PredictorKind::LogisticSynthetic,
            logistic_weights: Some(vec![900.0, -900.0, 5.0, 0.0, 1.0, 2.0, 3.0, -4.0]),
            ..PredictorConfig::default()
        };
        let p = Predictor::new(&cfg).unwrap();
        let mut rng = seeds::stream(3, &[]);
        for _ in 0..1_000_000 {
            let x = sample_features(&mut rng, 8);
            let v = p.predict(&x, &mut rng);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    proptest! {
        #[test]
        fn perturb_is_stable_at_zero(p in 0.0f64..=1.0, d in -1.0f64..=1.0) {
            prop_assert_eq!(perturb(p, 0.0), p);
            let once = perturb(p, d);
            prop_assert_eq!(perturb(once, 0.0), once);
            prop_assert!((0.0..=1.0).contains(&once));
        }
    }
}
