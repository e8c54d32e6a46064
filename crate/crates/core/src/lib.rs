//! Adaptive double-booking for outpatient appointment scheduling.
//!
//! A discrete-event clinic simulator ([`simenv`]) feeds an ensemble of PPO
//! actor-critic policies ([`ppo`], [`coevolve`]), each trained on its own
//! weighting of three slot-level objectives: effective utilization,
//! double-show avoidance and attendance balance. Neighbouring policies in
//! weight space periodically exchange parameters, with the blend strength
//! damped by the KL divergence between their action distributions.
//! [`evalbench`] scores frozen policies against single- and threshold
//! double-booking heuristics, and [`explain`] attributes decisions to state
//! features with exact Shapley values.

pub mod approximator;
pub mod coevolve;
pub mod domain;
pub mod error;
pub mod evalbench;
pub mod experiment;
pub mod explain;
pub mod noshow;
pub mod ppo;
pub mod seeds;
pub mod simenv;

pub use domain::{
    Action, ActionMask, BookingRequest, ClinicTopology, Observation, SlotCandidates, SlotRef,
    WeightVector, FEATURE_NAMES, OBS_DIM,
};
pub use error::{Error, Result};
pub use simenv::{RewardComponents, SchedulingEnv, SimConfig, SimWorld};
