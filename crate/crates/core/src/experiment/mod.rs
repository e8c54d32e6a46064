//! Experiment configuration, checkpoints, CSV outputs and the end-to-end
//! train / eval / sensitivity / explain runners.

mod checkpoint;
mod output;
mod runner;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use output::{read_csv, write_csv, CsvRow, ParetoRow};
pub use runner::{
    attribution_file, attribution_instances_file, run_eval, run_explain, run_sensitivity,
    run_train, EvalOptions, ExplainOptions, SensitivityOptions, TrainOutcome, CHECKPOINT_FILE,
    COEVOLUTION_FILE, CONFIG_FILE, CURVES_FILE, EVENTS_FILE, PARETO_FILE, PARTIAL_FILE,
    RESULTS_FILE, SENSITIVITY_FILE,
};

use crate::approximator::NetworkConfig;
use crate::coevolve::CoEvolutionConfig;
use crate::domain::WeightVector;
use crate::error::{Error, Result};
use crate::evalbench::DEFAULT_DELTAS;
use crate::noshow::PredictorConfig;
use crate::ppo::PpoConfig;
use crate::simenv::{SimConfig, SimWorld};

/// Evaluation-side settings; not part of the training fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub include_baselines: bool,
    /// Sample actions instead of taking the argmax.
    pub sample_actions: bool,
    /// Weights used to score the heuristic baselines.
    pub baseline_weights: WeightVector,
    pub deltas: Vec<f64>,
    /// Instances attributed per action.
    pub explain_samples: usize,
    pub explain_background: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 5,
            include_baselines: true,
            sample_actions: false,
            baseline_weights: WeightVector {
                alpha: 0.33,
                beta: 0.33,
                gamma: 0.34,
            },
            deltas: DEFAULT_DELTAS.to_vec(),
            explain_samples: 32,
            explain_background: 256,
        }
    }
}

/// Everything that drives one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub output_dir: PathBuf,
    /// Worker threads; 1 runs everything serially.
    pub threads: usize,
    pub sim: SimConfig,
    pub predictor: PredictorConfig,
    pub network: NetworkConfig,
    pub ppo: PpoConfig,
    pub coevolution: CoEvolutionConfig,
    pub weights: Vec<WeightVector>,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            epochs: 250,
            output_dir: PathBuf::from("runs/default"),
            threads: 1,
            sim: SimConfig::default(),
            predictor: PredictorConfig::default(),
            network: NetworkConfig::default(),
            ppo: PpoConfig::default(),
            coevolution: CoEvolutionConfig::default(),
            weights: WeightVector::default_table(),
            eval: EvalConfig::default(),
        }
    }
}

/// The subset of the config that determines training results.
#[derive(Serialize)]
struct TrainingIdentity<'a> {
    seed: u64,
    sim: &'a SimConfig,
    predictor: &'a PredictorConfig,
    network: &'a NetworkConfig,
    ppo: &'a PpoConfig,
    coevolution: &'a CoEvolutionConfig,
    weights: &'a [WeightVector],
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.predictor.validate()?;
        self.network.validate()?;
        self.ppo.validate()?;
        self.coevolution.validate(self.weights.len())?;
        if self.weights.len() < 2 {
            return Err(Error::Config(
                "at least two weight rows are required".into(),
            ));
        }
        for w in &self.weights {
            w.validate()?;
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be positive".into()));
        }
        self.eval.baseline_weights.validate()?;
        if self.eval.deltas.iter().any(|d| !(-1.0..=1.0).contains(d)) {
            return Err(Error::Config(format!(
                "deltas {:?} must lie in [-1, 1]",
                self.eval.deltas
            )));
        }
        if self.eval.explain_samples == 0 || self.eval.explain_background == 0 {
            return Err(Error::Config(
                "explain sample and background sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// SHA-256 over the training-relevant fields in canonical order.
    ///
    /// Epoch count, threads, output location and evaluation settings are
    /// excluded so a run can be extended or re-evaluated under the same
    /// fingerprint.
    pub fn fingerprint(&self) -> String {
        let identity = TrainingIdentity {
            seed: self.seed,
            sim: &self.sim,
            predictor: &self.predictor,
            network: &self.network,
            ppo: &self.ppo,
            coevolution: &self.coevolution,
            weights: &self.weights,
        };
        let bytes = serde_json::to_vec(&identity).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn world(&self) -> Result<Arc<SimWorld>> {
        SimWorld::new(&self.sim, &self.predictor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg =
            ExperimentConfig::from_json(r#"{"seed": 7, "sim": {"arrival_rate": 30.0}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.sim.arrival_rate, 30.0);
        assert_eq!(cfg.sim.horizon_days, 14);
        assert_eq!(cfg.weights.len(), 10);
    }

    #[test]
    fn unknown_and_invalid_fields_are_refused() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"sede": 1}"#),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"ppo": {"clip": 0.1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sim": {"arrival_rate": -1.0}}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"weights": [{"alpha": 1.0, "beta": 0.5, "gamma": 0.0}]}"#
        )
        .is_err());
    }

    #[test]
    fn fingerprint_tracks_training_fields_only() {
        let base = ExperimentConfig::default();
        let mut longer = base.clone();
        longer.epochs = 500;
        longer.threads = 4;
        longer.eval.episodes = 9;
        assert_eq!(base.fingerprint(), longer.fingerprint());
        let mut other = base.clone();
        other.ppo.clip_epsilon = 0.1;
        assert_ne!(base.fingerprint(), other.fingerprint());
        assert_eq!(base.fingerprint().len(), 64);
    }
}
