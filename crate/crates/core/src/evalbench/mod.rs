//! Frozen-policy evaluation: realized slot metrics, heuristic baselines,
//! perturbation sweeps and Pareto filtering.

mod baseline;
mod pareto;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use baseline::BaselinePolicy;
pub use pareto::{dominates, pareto_front, Objectives};

use crate::approximator::{forward_policy, Mlp};
use crate::domain::{Action, Observation, WeightVector};
use crate::error::{Error, Result};
use crate::ppo::{greedy_action, sample_action};
use crate::seeds;
use crate::simenv::{Decision, EventLogRow, SchedulingEnv, SimWorld};

/// Who makes the booking decisions during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum DecisionSource<'a> {
    /// A trained actor; argmax over valid actions unless `sample` is set.
    Policy {
        actor: &'a Mlp,
        sample: bool,
    },
    Baseline(BaselinePolicy),
}

impl<'a> DecisionSource<'a> {
    pub fn greedy(actor: &'a Mlp) -> Self {
        DecisionSource::Policy {
            actor,
            sample: false,
        }
    }
}

/// Realized totals of one evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub requests: usize,
    pub scheduled: usize,
    pub rejected: usize,
    pub shows: usize,
    pub no_shows: usize,
    pub booked_slots: usize,
    pub double_slots: usize,
    pub u_sum: f64,
    /// Sum of D over double-booked slots only.
    pub d_double_sum: f64,
    /// Sum of D over all booked slots (single-booked slots count 1).
    pub d_sum: f64,
    pub b_sum: f64,
    /// Σ(1 − π) over booked patients, using the predicted π.
    pub expected_shows: f64,
}

impl EpisodeMetrics {
    fn per_slot(&self, total: f64) -> Option<f64> {
        (self.booked_slots > 0).then(|| total / self.booked_slots as f64)
    }

    pub fn u_bar(&self) -> Option<f64> {
        self.per_slot(self.u_sum)
    }

    /// Mean D over double-booked slots; absent when nothing was double-booked.
    pub fn d_bar(&self) -> Option<f64> {
        (self.double_slots > 0).then(|| self.d_double_sum / self.double_slots as f64)
    }

    pub fn b_bar(&self) -> Option<f64> {
        self.per_slot(self.b_sum)
    }

    pub fn r_total(&self, w: &WeightVector) -> f64 {
        w.alpha * self.u_sum + w.beta * self.d_sum + w.gamma * self.b_sum
    }

    /// Weighted realized reward averaged over booked slots.
    pub fn r_slot_mean(&self, w: &WeightVector) -> Option<f64> {
        self.per_slot(self.r_total(w))
    }

    /// Mean predicted show probability of the booked patients.
    pub fn expected_show_rate(&self) -> Option<f64> {
        (self.scheduled > 0).then(|| self.expected_shows / self.scheduled as f64)
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, sd })
    }

    fn of_counts(values: impl Iterator<Item = usize>) -> Stat {
        let v: Vec<f64> = values.map(|c| c as f64).collect();
        Stat::of(&v).unwrap_or_default()
    }
}

/// Evaluation summary of one decision source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub weights: WeightVector,
    pub booking_requests: Stat,
    pub scheduled: Stat,
    pub shows: Stat,
    pub no_shows: Stat,
    pub u_bar: Option<Stat>,
    pub d_bar: Option<Stat>,
    pub b_bar: Option<Stat>,
    pub r_slot_mean: Option<Stat>,
    pub r_total: Stat,
    pub episodes: Vec<EpisodeMetrics>,
}

impl MetricsReport {
    pub fn from_episodes(
        label: impl Into<String>,
        weights: WeightVector,
        episodes: Vec<EpisodeMetrics>,
    ) -> Self {
        let collect = |f: &dyn Fn(&EpisodeMetrics) -> Option<f64>| -> Option<Stat> {
            let v: Vec<f64> = episodes.iter().filter_map(f).collect();
            Stat::of(&v)
        };
        let r_total: Vec<f64> = episodes.iter().map(|e| e.r_total(&weights)).collect();
        MetricsReport {
            label: label.into(),
            weights,
            booking_requests: Stat::of_counts(episodes.iter().map(|e| e.requests)),
            scheduled: Stat::of_counts(episodes.iter().map(|e| e.scheduled)),
            shows: Stat::of_counts(episodes.iter().map(|e| e.shows)),
            no_shows: Stat::of_counts(episodes.iter().map(|e| e.no_shows)),
            u_bar: collect(&|e| e.u_bar()),
            d_bar: collect(&|e| e.d_bar()),
            b_bar: collect(&|e| e.b_bar()),
            r_slot_mean: collect(&|e| e.r_slot_mean(&weights)),
            r_total: Stat::of(&r_total).unwrap_or_default(),
            episodes,
        }
    }

    /// (Ū, D̄, B̄) for Pareto comparison. A source that never double-booked
    /// had no double-shows, so a missing D̄ counts as 1.
    pub fn objectives(&self) -> Option<Objectives> {
        Some([
            self.u_bar?.mean,
            self.d_bar.map_or(1.0, |d| d.mean),
            self.b_bar?.mean,
        ])
    }

    /// Mean predicted show rate of booked patients, pooled over episodes.
    pub fn expected_show_rate(&self) -> Option<f64> {
        let scheduled: usize = self.episodes.iter().map(|e| e.scheduled).sum();
        let expected: f64 = self.episodes.iter().map(|e| e.expected_shows).sum();
        (scheduled > 0).then(|| expected / scheduled as f64)
    }

    pub fn to_row(&self) -> ResultRow {
        ResultRow {
            policy: self.label.clone(),
            booking_request_mean: self.booking_requests.mean,
            booking_request_sd: self.booking_requests.sd,
            scheduled_mean: self.scheduled.mean,
            scheduled_sd: self.scheduled.sd,
            shows_mean: self.shows.mean,
            shows_sd: self.shows.sd,
            noshows_mean: self.no_shows.mean,
            noshows_sd: self.no_shows.sd,
            u_mean: self.u_bar.map(|s| s.mean),
            u_sd: self.u_bar.map(|s| s.sd),
            d_mean: self.d_bar.map(|s| s.mean),
            d_sd: self.d_bar.map(|s| s.sd),
            b_mean: self.b_bar.map(|s| s.mean),
            b_sd: self.b_bar.map(|s| s.sd),
            r_slotmean: self.r_slot_mean.map(|s| s.mean),
            r_slotmean_sd: self.r_slot_mean.map(|s| s.sd),
            r_total_mean: self.r_total.mean,
        }
    }
}

/// One line of the results table; absent metrics serialize as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub booking_request_mean: f64,
    pub booking_request_sd: f64,
    pub scheduled_mean: f64,
    pub scheduled_sd: f64,
    pub shows_mean: f64,
    pub shows_sd: f64,
    pub noshows_mean: f64,
    pub noshows_sd: f64,
    pub u_mean: Option<f64>,
    pub u_sd: Option<f64>,
    pub d_mean: Option<f64>,
    pub d_sd: Option<f64>,
    pub b_mean: Option<f64>,
    pub b_sd: Option<f64>,
    pub r_slotmean: Option<f64>,
    pub r_slotmean_sd: Option<f64>,
    pub r_total_mean: f64,
}

/// Seed of evaluation episode `k` under master `seed`.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    seeds::derive_seed(seed, &[seeds::EVAL, k as u64])
}

/// Play one episode to the end and tally realized metrics.
pub fn run_episode(
    world: Arc<SimWorld>,
    source: DecisionSource<'_>,
    env_seed: u64,
) -> Result<EpisodeMetrics> {
    let env = play(SchedulingEnv::reset(world, env_seed)?, source, env_seed)?;
    Ok(tally(&env, env_seed))
}

/// Booking and arrival events of one evaluation episode.
pub fn episode_event_log(
    world: Arc<SimWorld>,
    source: DecisionSource<'_>,
    env_seed: u64,
) -> Result<Vec<EventLogRow>> {
    let env = play(
        SchedulingEnv::reset_with_log(world, env_seed)?,
        source,
        env_seed,
    )?;
    Ok(env.event_log().unwrap_or_default().to_vec())
}

/// Observations met while `source` plays episode `env_seed`.
pub fn visited_observations(
    world: Arc<SimWorld>,
    source: DecisionSource<'_>,
    env_seed: u64,
) -> Result<Vec<Observation>> {
    let mut seen = Vec::new();
    drive(
        SchedulingEnv::reset(world, env_seed)?,
        source,
        env_seed,
        |d| seen.push(d.observation),
    )?;
    Ok(seen)
}

fn play(env: SchedulingEnv, source: DecisionSource<'_>, env_seed: u64) -> Result<SchedulingEnv> {
    drive(env, source, env_seed, |_| ())
}

fn drive(
    mut env: SchedulingEnv,
    source: DecisionSource<'_>,
    env_seed: u64,
    mut visit: impl FnMut(&Decision),
) -> Result<SchedulingEnv> {
    let mut rng = seeds::stream(env_seed, &[seeds::POLICY]);
    while let Some(d) = env.pending() {
        visit(d);
        match source {
            DecisionSource::Policy { actor, sample } => {
                let probs = forward_policy(actor, &d.observation, &d.mask)?;
                let a = if sample {
                    sample_action(&probs, &mut rng)
                } else {
                    greedy_action(&probs)
                };
                env.step(Action::from_index(a).expect("three actions"))?;
            }
            DecisionSource::Baseline(rule) => {
                match rule.decide(&d.candidates, d.request.noshow_prob) {
                    Action::Reject => {
                        env.decline()?;
                    }
                    a => {
                        env.step(a)?;
                    }
                }
            }
        }
    }
    Ok(env)
}

fn tally(env: &SchedulingEnv, env_seed: u64) -> EpisodeMetrics {
    let c = env.counts();
    let mut m = EpisodeMetrics {
        seed: env_seed,
        requests: c.requests,
        scheduled: c.scheduled,
        rejected: c.rejected,
        shows: c.shows,
        no_shows: c.no_shows,
        ..EpisodeMetrics::default()
    };
    for rec in env.records() {
        m.booked_slots += 1;
        m.u_sum += rec.realized.u;
        m.d_sum += rec.realized.d;
        m.b_sum += rec.realized.b;
        if rec.outcome.was_double_booked {
            m.double_slots += 1;
            m.d_double_sum += rec.realized.d;
        }
    }
    m.expected_shows = env
        .calendar()
        .iter()
        .flat_map(|(_, s)| s.bookings())
        .map(|b| 1.0 - b.noshow_prob)
        .sum();
    m
}

/// Evaluate `source` on `episodes` seeded episodes.
pub fn evaluate_policy(
    world: &Arc<SimWorld>,
    label: impl Into<String>,
    source: DecisionSource<'_>,
    episodes: usize,
    seed: u64,
    weights: WeightVector,
) -> Result<MetricsReport> {
    if episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let rows = (0..episodes)
        .into_par_iter()
        .map(|k| run_episode(world.clone(), source, episode_seed(seed, k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_episodes(label, weights, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub policy: String,
    pub delta: f64,
    pub r_slotmean: Option<f64>,
    pub rel_change: Option<f64>,
}

pub const DEFAULT_DELTAS: [f64; 4] = [-0.05, -0.03, 0.03, 0.05];

/// Re-evaluate under shifted no-show probabilities. The unperturbed run
/// comes first and every delta reuses the same episode seeds.
pub fn sensitivity_sweep(
    world: &Arc<SimWorld>,
    label: &str,
    source: DecisionSource<'_>,
    weights: WeightVector,
    deltas: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<SensitivityRow>> {
    let mut grid = vec![0.0];
    grid.extend(deltas.iter().copied().filter(|&d| d != 0.0));
    let reports = grid
        .par_iter()
        .map(|&delta| {
            evaluate_policy(
                &world.with_delta(delta)?,
                label,
                source,
                episodes,
                seed,
                weights,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = reports[0].r_slot_mean.map(|s| s.mean);
    Ok(grid
        .iter()
        .zip(&reports)
        .map(|(&delta, report)| {
            let r = report.r_slot_mean.map(|s| s.mean);
            let rel_change = if delta == 0.0 {
                reference.map(|_| 0.0)
            } else {
                r.zip(reference).map(|(r, r0)| (r - r0) / r0.abs())
            };
            SensitivityRow {
                policy: label.to_string(),
                delta,
                r_slotmean: r,
                rel_change,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noshow::PredictorConfig;
    use crate::simenv::SimConfig;

    fn small_world() -> Arc<SimWorld> {
        SimWorld::new(
            &SimConfig {
                arrival_rate: 30.0,
                topology: vec![vec![3]],
                ..SimConfig::default()
            },
            &PredictorConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn single_booking_tracks_predicted_show_rate() {
        let w = small_world();
        let report = evaluate_policy(
            &w,
            "SB",
            DecisionSource::Baseline(BaselinePolicy::SingleBookingOnly),
            5,
            11,
            WeightVector::new(1.0, 0.0, 0.0).unwrap(),
        )
        .unwrap();
        assert!(report.d_bar.is_none());
        let u = report.u_bar.unwrap().mean;
        let expected = report.expected_show_rate().unwrap();
        assert!((u - expected).abs() < 0.03, "{u} vs {expected}");
        // utilization-only weights collapse R̄ onto Ū
        assert_eq!(report.r_slot_mean.unwrap(), report.u_bar.unwrap());
        for e in &report.episodes {
            assert_eq!(e.shows + e.no_shows, e.scheduled);
            assert_eq!(e.booked_slots, e.scheduled);
        }
    }

    #[test]
    fn thresholds_double_book() {
        let w = small_world();
        let weights = WeightVector::new(0.33, 0.33, 0.34).unwrap();
        let r = evaluate_policy(
            &w,
            "DB0.5",
            DecisionSource::Baseline(BaselinePolicy::DoubleBookThreshold(0.5)),
            2,
            3,
            weights,
        )
        .unwrap();
        let d = r.d_bar.unwrap().mean;
        assert!((0.0..=1.0).contains(&d));
        assert!(r.episodes.iter().all(|e| e.double_slots > 0));
        let row = r.to_row();
        assert_eq!(row.policy, "DB0.5");
        assert_eq!(row.d_mean, Some(d));
    }

    #[test]
    fn evaluation_is_reproducible() {
        let w = small_world();
        let weights = WeightVector::new(0.2, 0.3, 0.5).unwrap();
        let src = DecisionSource::Baseline(BaselinePolicy::DoubleBookThreshold(0.7));
        let a = evaluate_policy(&w, "x", src, 3, 9, weights).unwrap();
        let b = evaluate_policy(&w, "x", src, 3, 9, weights).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_delta_is_the_reference() {
        let w = small_world();
        let weights = WeightVector::new(0.2, 0.3, 0.5).unwrap();
        let src = DecisionSource::Baseline(BaselinePolicy::DoubleBookThreshold(0.6));
        let rows = sensitivity_sweep(&w, "DB0.6", src, weights, &DEFAULT_DELTAS, 2, 5).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].delta, 0.0);
        assert_eq!(rows[0].rel_change, Some(0.0));
        let plain = evaluate_policy(&w, "DB0.6", src, 2, 5, weights).unwrap();
        assert_eq!(rows[0].r_slotmean, plain.r_slot_mean.map(|s| s.mean));
        assert!(rows[1..].iter().all(|r| r.rel_change.is_some()));
    }

    #[test]
    fn stat_uses_sample_deviation() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.sd - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(Stat::of(&[4.0]).unwrap().sd, 0.0);
        assert!(Stat::of(&[]).is_none());
    }
}
