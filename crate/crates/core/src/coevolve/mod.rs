//! Multi-policy training: one PPO learner per objective weighting, with a
//! periodic co-evolution phase that pulls each policy toward a better
//! neighbour in weight space.

mod pool;
mod transfer;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pool::StatePool;
pub use transfer::{adaptive_tau, categorical_kl, estimate_kl, neighbor_set, KL_FLOOR};

use crate::approximator::{soft_blend, Mlp, NetworkConfig};
use crate::domain::WeightVector;
use crate::error::{Error, Result};
use crate::ppo::{collect_rollout, ppo_update, ActorCritic, PpoConfig};
use crate::seeds;
use crate::simenv::{RewardComponents, SchedulingEnv, SimWorld};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoEvolutionConfig {
    /// Epochs between co-evolution phases.
    pub period: usize,
    pub tau_max: f64,
    pub phi: f64,
    pub neighbor_count: usize,
    pub kl_sample_size: usize,
}

impl Default for CoEvolutionConfig {
    fn default() -> Self {
        CoEvolutionConfig {
            period: 10,
            tau_max: 0.5,
            phi: 0.5,
            neighbor_count: 2,
            kl_sample_size: 1024,
        }
    }
}

impl CoEvolutionConfig {
    pub fn validate(&self, ensemble_size: usize) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config(
                "co-evolution period must be at least 1".into(),
            ));
        }
        if !(self.tau_max > 0.0 && self.tau_max <= 1.0) {
            return Err(Error::Config(format!(
                "tau_max {} outside (0, 1]",
                self.tau_max
            )));
        }
        if self.phi.is_nan() || self.phi < 0.0 {
            return Err(Error::Config(format!(
                "phi {} must be non-negative",
                self.phi
            )));
        }
        if self.neighbor_count >= ensemble_size {
            return Err(Error::Config(format!(
                "neighbor_count {} must be below the ensemble size {ensemble_size}",
                self.neighbor_count
            )));
        }
        if self.kl_sample_size == 0 {
            return Err(Error::Config("kl_sample_size must be positive".into()));
        }
        Ok(())
    }

    pub fn is_phase(&self, epoch: usize) -> bool {
        epoch > 0 && epoch.is_multiple_of(self.period)
    }
}

/// One row of the per-epoch training curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub policy_id: usize,
    /// Mean per-episode return under the member's own weights.
    pub mean_shaped_total_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_shaped_reward_per_decision: f64,
}

/// One member's outcome in a co-evolution phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoevolutionRow {
    pub epoch: usize,
    pub p: usize,
    pub q_star: usize,
    pub kl: Option<f64>,
    pub tau: Option<f64>,
    pub transferred: u8,
    pub return_p: f64,
    pub return_qstar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: usize,
    pub weights: WeightVector,
    pub net: ActorCritic,
    #[serde(with = "seeds::serde_rng")]
    pub rng: ChaCha8Rng,
    /// Mean per-episode shaped components of the latest rollout.
    pub last_components: RewardComponents,
    pub epochs_trained: usize,
}

impl Member {
    /// Latest mean return re-scalarized under `w`.
    pub fn return_under(&self, w: &WeightVector) -> f64 {
        self.last_components.scalarize(w)
    }

    fn train_epoch(
        &mut self,
        world: &Arc<SimWorld>,
        ppo: &PpoConfig,
        master_seed: u64,
        epoch: usize,
    ) -> Result<(CurveRow, crate::ppo::Trajectory)> {
        let id = self.id as u64;
        let traj = collect_rollout(
            &self.net.actor,
            &self.net.critic,
            &self.weights,
            |k| {
                let seed =
                    seeds::derive_seed(master_seed, &[seeds::TRAIN, id, epoch as u64, k as u64]);
                SchedulingEnv::reset(world.clone(), seed)
            },
            ppo.episodes_per_epoch,
            &mut self.rng,
        )?;
        let stats = ppo_update(&mut self.net, &traj, ppo, &mut self.rng)
            .map_err(|e| Error::Training(format!("member {} epoch {epoch}: {e}", self.id)))?;
        self.last_components = traj.mean_episode_components();
        self.epochs_trained = epoch;
        let row = CurveRow {
            epoch,
            policy_id: self.id,
            mean_shaped_total_reward: traj.mean_episode_return(),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            mean_shaped_reward_per_decision: traj.mean_reward_per_decision(),
        };
        Ok((row, traj))
    }
}

/// Policies trained side by side, plus the shared state pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEnsemble {
    pub members: Vec<Member>,
    pub pool: StatePool,
    /// Completed epochs.
    pub epoch: usize,
    pub master_seed: u64,
}

/// What one epoch produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochReport {
    pub curves: Vec<CurveRow>,
    pub coevolution: Vec<CoevolutionRow>,
}

/// Independently initialized actor-critic pairs, one per weight row.
pub fn build_ensemble(
    table: &[WeightVector],
    network: &NetworkConfig,
    pool_capacity: usize,
    seed: u64,
) -> Result<PolicyEnsemble> {
    if table.len() < 2 {
        return Err(Error::Config(
            "an ensemble needs at least two members".into(),
        ));
    }
    network.validate()?;
    let members = table
        .iter()
        .enumerate()
        .map(|(id, w)| {
            w.validate()?;
            let mut init = seeds::stream(seed, &[seeds::INIT, id as u64]);
            let actor = Mlp::new(
                &network.actor_sizes(),
                network.hidden_gain,
                network.actor_output_gain,
                &mut init,
            );
            let critic = Mlp::new(
                &network.critic_sizes(),
                network.hidden_gain,
                network.critic_output_gain,
                &mut init,
            );
            Ok(Member {
                id,
                weights: *w,
                net: ActorCritic::new(actor, critic, network.actor_lr, network.critic_lr),
                rng: seeds::stream(seed, &[seeds::POLICY, id as u64]),
                last_components: RewardComponents::ZERO,
                epochs_trained: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyEnsemble {
        members,
        pool: StatePool::new(pool_capacity),
        epoch: 0,
        master_seed: seed,
    })
}

/// Blend every member toward its best neighbour when that neighbour's
/// latest return, scored under the member's own weights, is higher.
///
/// Returns and KLs are read from a snapshot taken before any blend.
pub fn coevolution_step(
    members: &mut [Member],
    pool: &StatePool,
    config: &CoEvolutionConfig,
    epoch: usize,
) -> Result<Vec<CoevolutionRow>> {
    let weights: Vec<WeightVector> = members.iter().map(|m| m.weights).collect();
    let snapshot: Vec<Member> = members.to_vec();
    let mut log = Vec::with_capacity(members.len());
    for p in 0..members.len() {
        let wp = &weights[p];
        let own = snapshot[p].return_under(wp);
        let mut best: Option<(usize, f64)> = None;
        for q in neighbor_set(&weights, p, config.neighbor_count) {
            let r = snapshot[q].return_under(wp);
            if best.is_none_or(|(bq, br)| r > br || (r == br && q < bq)) {
                best = Some((q, r));
            }
        }
        let Some((q, r_q)) = best else { continue };
        let mut row = CoevolutionRow {
            epoch,
            p,
            q_star: q,
            kl: None,
            tau: None,
            transferred: 0,
            return_p: own,
            return_qstar: r_q,
        };
        if r_q > own {
            let kl = estimate_kl(&snapshot[p].net.actor, &snapshot[q].net.actor, pool)?;
            let tau = adaptive_tau(kl, config.tau_max, config.phi);
            let member = &mut members[p];
            member.net.actor = soft_blend(&snapshot[p].net.actor, &snapshot[q].net.actor, tau)?;
            member.net.critic = soft_blend(&snapshot[p].net.critic, &snapshot[q].net.critic, tau)?;
            member.net.actor_opt.reset();
            member.net.critic_opt.reset();
            row.kl = Some(kl);
            row.tau = Some(tau);
            row.transferred = 1;
        }
        log.push(row);
    }
    Ok(log)
}

impl PolicyEnsemble {
    pub fn weights(&self) -> Vec<WeightVector> {
        self.members.iter().map(|m| m.weights).collect()
    }

    /// Train every member for one epoch, refresh the state pool, and run a
    /// co-evolution phase when the epoch number calls for one.
    ///
    /// Members train in parallel on the current rayon pool; results do not
    /// depend on the thread count.
    pub fn train_epoch(
        &mut self,
        world: &Arc<SimWorld>,
        ppo: &PpoConfig,
        coevolution: &CoEvolutionConfig,
    ) -> Result<EpochReport> {
        let epoch = self.epoch + 1;
        let seed = self.master_seed;
        let results = self
            .members
            .par_iter_mut()
            .map(|m| m.train_epoch(world, ppo, seed, epoch))
            .collect::<Result<Vec<_>>>()?;
        let quota = self.pool.capacity().div_ceil(self.members.len());
        let mut report = EpochReport::default();
        for (row, traj) in results {
            self.pool.absorb(&traj.observations, &traj.masks, quota);
            report.curves.push(row);
        }
        if coevolution.is_phase(epoch) {
            report.coevolution =
                coevolution_step(&mut self.members, &self.pool, coevolution, epoch)?;
        }
        self.epoch = epoch;
        Ok(report)
    }
}

/// Run epochs until `ensemble.epoch == epochs`, calling `on_epoch` after each.
pub fn train<F>(
    ensemble: &mut PolicyEnsemble,
    world: &Arc<SimWorld>,
    ppo: &PpoConfig,
    coevolution: &CoEvolutionConfig,
    epochs: usize,
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(&PolicyEnsemble, &EpochReport) -> Result<()>,
{
    ppo.validate()?;
    coevolution.validate(ensemble.members.len())?;
    while ensemble.epoch < epochs {
        let report = ensemble.train_epoch(world, ppo, coevolution)?;
        on_epoch(ensemble, &report)?;
    }
    Ok(())
}
