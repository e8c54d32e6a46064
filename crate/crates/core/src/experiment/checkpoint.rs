use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::coevolve::{CoevolutionRow, CurveRow, PolicyEnsemble};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Full training state: config, every member's networks and optimizer
/// moments, RNG positions, the state pool, and the logs so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub ensemble: PolicyEnsemble,
    pub curves: Vec<CurveRow>,
    pub coevolution: Vec<CoevolutionRow>,
}

impl Checkpoint {
    pub fn new(
        config: ExperimentConfig,
        ensemble: PolicyEnsemble,
        curves: Vec<CurveRow>,
        coevolution: Vec<CoevolutionRow>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            fingerprint: config.fingerprint(),
            config,
            ensemble,
            curves,
            coevolution,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    /// Write via a temporary file so a crash never leaves a truncated checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Parse and validate; `origin` only labels errors.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptCheckpoint {
            path: origin.to_path_buf(),
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::CheckpointVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        let actual = ckpt.config.fingerprint();
        if ckpt.fingerprint != actual {
            return Err(Error::FingerprintMismatch {
                checkpoint: ckpt.fingerprint,
                config: actual,
            });
        }
        ckpt.config.validate().map_err(|e| corrupt(e.to_string()))?;
        if ckpt.ensemble.weights() != ckpt.config.weights {
            return Err(corrupt(
                "member weights disagree with the stored config".into(),
            ));
        }
        Ok(ckpt)
    }

    /// Refuse to pair this checkpoint with a config that trains differently.
    pub fn ensure_matches(&self, config: &ExperimentConfig) -> Result<()> {
        let expected = config.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                checkpoint: self.fingerprint.clone(),
                config: expected,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::NetworkConfig;
    use crate::coevolve::build_ensemble;

    fn small() -> Checkpoint {
        let config = ExperimentConfig {
            network: NetworkConfig {
                hidden: vec![4],
                ..NetworkConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let ensemble = build_ensemble(&config.weights, &config.network, 4, config.seed).unwrap();
        Checkpoint::new(config, ensemble, vec![], vec![])
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let ckpt = small();
        ckpt.save(&a).unwrap();
        let back = Checkpoint::load(&a).unwrap();
        assert_eq!(back, ckpt);
        back.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn distinct_error_kinds() {
        let origin = Path::new("x.json");
        let ckpt = small();
        let mut v: serde_json::Value = serde_json::from_str(&ckpt.to_json()).unwrap();

        v["fingerprint"] = "00".into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string(), origin),
            Err(Error::FingerprintMismatch { .. })
        ));

        v["fingerprint"] = ckpt.fingerprint.clone().into();
        v["format_version"] = 99.into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string(), origin),
            Err(Error::CheckpointVersion { found: 99, .. })
        ));

        v["format_version"] = FORMAT_VERSION.into();
        v.as_object_mut().unwrap().remove("ensemble");
        assert!(matches!(
            Checkpoint::from_json(&v.to_string(), origin),
            Err(Error::CorruptCheckpoint { .. })
        ));
        assert!(matches!(
            Checkpoint::from_json("{not json", origin),
            Err(Error::CorruptCheckpoint { .. })
        ));
    }

    #[test]
    fn config_mismatch_is_refused() {
        let ckpt = small();
        let mut other = ckpt.config.clone();
        assert!(ckpt.ensure_matches(&other).is_ok());
        other.seed += 1;
        assert!(matches!(
            ckpt.ensure_matches(&other),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}
