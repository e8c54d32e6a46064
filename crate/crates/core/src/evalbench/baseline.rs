use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Action, SlotCandidates};
use crate::error::{Error, Result};

/// Rule-based booking heuristics used as reference points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaselinePolicy {
    SingleBookingOnly,
    /// Double-book when the predicted no-show probability is at least θ.
    DoubleBookThreshold(f64),
}

impl BaselinePolicy {
    pub const THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

    /// SB followed by the five threshold rules.
    pub fn standard_set() -> Vec<BaselinePolicy> {
        std::iter::once(BaselinePolicy::SingleBookingOnly)
            .chain(
                Self::THRESHOLDS
                    .iter()
                    .map(|&t| BaselinePolicy::DoubleBookThreshold(t)),
            )
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselinePolicy::DoubleBookThreshold(t) if !(0.0..=1.0).contains(&t) => {
                Err(Error::Config(format!("threshold {t} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Choose an action for a request with predicted no-show probability `pi`.
    ///
    /// May return [`Action::Reject`] while a double-booking candidate
    /// exists; callers must route that through `SchedulingEnv::decline`.
    pub fn decide(&self, candidates: &SlotCandidates, pi: f64) -> Action {
        let single = candidates.empty.is_some();
        let double = candidates.double.is_some();
        match *self {
            BaselinePolicy::SingleBookingOnly => {
                if single {
                    Action::SingleBook
                } else {
                    Action::Reject
                }
            }
            BaselinePolicy::DoubleBookThreshold(theta) => {
                let eager = pi >= theta;
                if eager && double {
                    Action::DoubleBook
                } else if single {
                    Action::SingleBook
                } else {
                    // `eager && double` was handled above
                    Action::Reject
                }
            }
        }
    }
}

impl fmt::Display for BaselinePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselinePolicy::SingleBookingOnly => write!(f, "SB"),
            BaselinePolicy::DoubleBookThreshold(t) => write!(f, "DB{t:.1}"),
        }
    }
}
