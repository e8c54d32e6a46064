//! Single-policy PPO: rollout collection, advantage estimation and
//! clipped-surrogate updates.

mod gae;
mod loss;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gae::{compute_gae, normalize};
pub use loss::{actor_loss, clipped_objective, critic_loss, entropy, ActorBatch, ActorLoss};

use crate::approximator::{batch, forward_policy, Adam, Mlp};
use crate::domain::{Action, ActionMask, Observation, WeightVector, OBS_DIM};
use crate::error::{Error, Result};
use crate::simenv::{DecisionEnv, RewardComponents};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub discount: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub episodes_per_epoch: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            discount: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            update_epochs: 4,
            minibatch_size: 256,
            value_coef: 0.5,
            entropy_coef: 0.01,
            episodes_per_epoch: 5,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!(
                "discount {} outside (0, 1]",
                self.discount
            )));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(format!(
                "gae_lambda {} outside [0, 1]",
                self.gae_lambda
            )));
        }
        if self.clip_epsilon.is_nan() || self.clip_epsilon <= 0.0 {
            return Err(Error::Config("clip_epsilon must be positive".into()));
        }
        if self.update_epochs == 0 || self.minibatch_size == 0 || self.episodes_per_epoch == 0 {
            return Err(Error::Config(
                "update_epochs, minibatch_size and episodes_per_epoch must be positive".into(),
            ));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::Config(
                "loss coefficients must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-episode totals of shaped rewards.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub decisions: usize,
    pub shaped: RewardComponents,
    pub scalar: f64,
}

/// Decision steps collected under one behavior policy.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub masks: Vec<ActionMask>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    /// Shaped components scalarized with the collecting policy's weights.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminals: Vec<bool>,
    pub episodes: Vec<EpisodeSummary>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Mean per-episode shaped component totals.
    pub fn mean_episode_components(&self) -> RewardComponents {
        if self.episodes.is_empty() {
            return RewardComponents::ZERO;
        }
        self.episodes
            .iter()
            .fold(RewardComponents::ZERO, |acc, e| acc.add(&e.shaped))
            .scale(1.0 / self.episodes.len() as f64)
    }

    pub fn mean_episode_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.scalar).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn mean_reward_per_decision(&self) -> f64 {
        if self.rewards.is_empty() {
            return 0.0;
        }
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Draw an action index from `probs` using one uniform variate.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Most probable action; ties go to the lower index.
pub fn greedy_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Run `episodes` full episodes with actions sampled from the masked policy.
/// `make_env(k)` builds the environment for episode `k`.
pub fn collect_rollout<E, F, R>(
    actor: &Mlp,
    critic: &Mlp,
    weights: &WeightVector,
    mut make_env: F,
    episodes: usize,
    rng: &mut R,
) -> Result<Trajectory>
where
    E: DecisionEnv,
    F: FnMut(usize) -> Result<E>,
    R: Rng + ?Sized,
{
    let mut traj = Trajectory::default();
    for k in 0..episodes {
        let mut env = make_env(k)?;
        let mut summary = EpisodeSummary::default();
        while let Some((obs, mask)) = env.decision() {
            let (obs, mask) = (*obs, *mask);
            let probs = forward_policy(actor, &obs, &mask)?;
            let a = sample_action(&probs, rng);
            let action = Action::from_index(a).expect("three actions");
            let out = env.step(action)?;
            let reward = out.shaped.scalarize(weights);
            summary.decisions += 1;
            summary.shaped = summary.shaped.add(&out.shaped);
            summary.scalar += reward;
            traj.observations.push(obs);
            traj.masks.push(mask);
            traj.actions.push(action);
            traj.log_probs.push(probs[a].ln());
            traj.rewards.push(reward);
            traj.terminals.push(out.done);
        }
        if let Some(last) = traj.terminals.last_mut() {
            *last = true;
        }
        traj.episodes.push(summary);
    }
    traj.values = evaluate_values(critic, &traj.observations);
    Ok(traj)
}

/// Critic estimates for a list of observations, in chunks.
pub fn evaluate_values(critic: &Mlp, observations: &[Observation]) -> Vec<f64> {
    let mut out = Vec::with_capacity(observations.len());
    for chunk in observations.chunks(1024) {
        let x = batch(chunk.iter().map(Observation::as_slice), OBS_DIM);
        out.extend(critic.forward(x.view()).column(0).iter().copied());
    }
    out
}

/// Mean statistics of one [`ppo_update`] call.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Optimizer state of an actor-critic pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl ActorCritic {
    pub fn new(actor: Mlp, critic: Mlp, actor_lr: f64, critic_lr: f64) -> Self {
        ActorCritic {
            actor_opt: Adam::new(&actor, actor_lr),
            critic_opt: Adam::new(&critic, critic_lr),
            actor,
            critic,
        }
    }
}

/// Several epochs of minibatch PPO over `traj`.
pub fn ppo_update<R: Rng + ?Sized>(
    net: &mut ActorCritic,
    traj: &Trajectory,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if traj.is_empty() {
        return Err(Error::Contract(
            "cannot update on an empty trajectory".into(),
        ));
    }
    let (mut advantages, returns) = compute_gae(
        &traj.rewards,
        &traj.values,
        &traj.terminals,
        config.discount,
        config.gae_lambda,
    );
    if config.normalize_advantages {
        normalize(&mut advantages);
    }
    let n = traj.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..config.update_epochs {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch_size) {
            let obs = batch(
                idx.iter().map(|&i| traj.observations[i].as_slice()),
                OBS_DIM,
            );
            let masks: Vec<ActionMask> = idx.iter().map(|&i| traj.masks[i]).collect();
            let actions: Vec<Action> = idx.iter().map(|&i| traj.actions[i]).collect();
            let old: Vec<f64> = idx.iter().map(|&i| traj.log_probs[i]).collect();
            let adv: Vec<f64> = idx.iter().map(|&i| advantages[i]).collect();
            let targets: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();

            let mb = ActorBatch {
                observations: obs.view(),
                masks: &masks,
                actions: &actions,
                old_log_probs: &old,
                advantages: &adv,
            };
            let (actor_stats, actor_grads) =
                actor_loss(&net.actor, &mb, config.clip_epsilon, config.entropy_coef);
            let (value_loss, critic_grads) =
                critic_loss(&net.critic, obs.view(), &targets, config.value_coef);
            if !actor_stats.total.is_finite() || !value_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss (policy {}, value {}) after {} minibatches",
                    actor_stats.total, value_loss, stats.minibatches
                )));
            }
            net.actor_opt.update(&mut net.actor, &actor_grads)?;
            net.critic_opt.update(&mut net.critic, &critic_grads)?;

            stats.policy_loss += actor_stats.total;
            stats.value_loss += value_loss;
            stats.entropy += actor_stats.entropy;
            stats.mean_ratio += actor_stats.mean_ratio;
            stats.clip_fraction += actor_stats.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.mean_ratio /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::NetworkConfig;
    use crate::noshow::PredictorConfig;
    use crate::seeds;
    use crate::simenv::{SchedulingEnv, SimConfig, SimWorld, StepOutcome};

    /// Two-state contextual bandit: the context bit says which of the two
    /// booking actions pays 1.
    struct Bandit {
        steps_left: usize,
        state: usize,
        rng: rand_chacha::ChaCha8Rng,
        obs: Observation,
    }

    impl Bandit {
        fn new(seed: u64, steps: usize) -> Self {
            let mut b = Bandit {
                steps_left: steps,
                state: 0,
                rng: seeds::stream(seed, &[]),
                obs: Observation([0.0; OBS_DIM]),
            };
            b.draw();
            b
        }

        fn draw(&mut self) {
            self.state = self.rng.random_range(0..2);
            self.obs = Observation([0.0; OBS_DIM]);
            self.obs.0[0] = self.state as f64;
        }
    }

    const BANDIT_MASK: ActionMask = ActionMask([true, true, false]);

    impl DecisionEnv for Bandit {
        fn decision(&self) -> Option<(&Observation, &ActionMask)> {
            (self.steps_left > 0).then_some((&self.obs, &BANDIT_MASK))
        }

        fn step(&mut self, action: Action) -> Result<StepOutcome> {
            let u = if action.index() == self.state {
                1.0
            } else {
                0.0
            };
            self.steps_left -= 1;
            self.draw();
            Ok(StepOutcome {
                shaped: RewardComponents { u, d: 0.0, b: 0.0 },
                placed: None,
                done: self.steps_left == 0,
            })
        }
    }

    fn small_net(seed: u64) -> ActorCritic {
        let mut rng = seeds::stream(seed, &[seeds::INIT]);
        let cfg = NetworkConfig {
            hidden: vec![32, 32],
            ..NetworkConfig::default()
        };
        let actor = Mlp::new(&cfg.actor_sizes(), 1.0, 0.01, &mut rng);
        let critic = Mlp::new(&cfg.critic_sizes(), 1.0, 1.0, &mut rng);
        ActorCritic::new(actor, critic, cfg.actor_lr, cfg.critic_lr)
    }

    #[test]
    fn bandit_is_learned() {
        let mut net = small_net(1);
        let mut rng = seeds::stream(1, &[seeds::POLICY]);
        let w = WeightVector::new(1.0, 0.0, 0.0).unwrap();
        let cfg = PpoConfig {
            minibatch_size: 64,
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        for update in 0..200u64 {
            let traj = collect_rollout(
                &net.actor,
                &net.critic,
                &w,
                |k| Ok(Bandit::new(update * 10 + k as u64, 32)),
                4,
                &mut rng,
            )
            .unwrap();
            ppo_update(&mut net, &traj, &cfg, &mut rng).unwrap();
        }
        for state in 0..2 {
            let mut obs = Observation([0.0; OBS_DIM]);
            obs.0[0] = state as f64;
            let p = forward_policy(&net.actor, &obs, &BANDIT_MASK).unwrap();
            assert!(p[state] > 0.95, "state {state}: {p:?}");
        }
    }

    #[test]
    fn rollout_records_valid_actions_and_replays() {
        let world = SimWorld::new(
            &SimConfig {
                arrival_rate: 30.0,
                ..SimConfig::default()
            },
            &PredictorConfig::default(),
        )
        .unwrap();
        let net = small_net(2);
        let w = WeightVector::new(0.2, 0.3, 0.5).unwrap();
        let run = || {
            let mut rng = seeds::stream(3, &[]);
            collect_rollout(
                &net.actor,
                &net.critic,
                &w,
                |k| SchedulingEnv::reset(world.clone(), k as u64),
                2,
                &mut rng,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.episodes.len(), 2);
        assert_eq!(a.terminals.iter().filter(|&&t| t).count(), 2);
        assert_eq!(
            a.episodes.iter().map(|e| e.decisions).sum::<usize>(),
            a.len()
        );
        assert!(a
            .actions
            .iter()
            .zip(&a.masks)
            .all(|(act, m)| m.allows(*act)));
        let total: f64 = a.episodes.iter().map(|e| e.scalar).sum();
        assert!((total - a.rewards.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn first_pass_ratios_are_one() {
        let mut net = small_net(4);
        let mut rng = seeds::stream(4, &[]);
        let w = WeightVector::new(1.0, 0.0, 0.0).unwrap();
        let traj = collect_rollout(
            &net.actor,
            &net.critic,
            &w,
            |k| Ok(Bandit::new(k as u64, 50)),
            2,
            &mut rng,
        )
        .unwrap();
        let obs = batch(traj.observations.iter().map(Observation::as_slice), OBS_DIM);
        let adv = vec![1.0; traj.len()];
        let mb = ActorBatch {
            observations: obs.view(),
            masks: &traj.masks,
            actions: &traj.actions,
            old_log_probs: &traj.log_probs,
            advantages: &adv,
        };
        let (stats, _) = actor_loss(&net.actor, &mb, 0.2, 0.01);
        assert!((stats.mean_ratio - 1.0).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);

        let cfg = PpoConfig {
            update_epochs: 1,
            minibatch_size: 1_000_000,
            ..PpoConfig::default()
        };
        let s = ppo_update(&mut net, &traj, &cfg, &mut rng).unwrap();
        assert_eq!(s.minibatches, 1);
        assert!((s.mean_ratio - 1.0).abs() < 1e-12);
        assert!(ppo_update(&mut net, &Trajectory::default(), &cfg, &mut rng).is_err());
    }

    #[test]
    fn sampling_respects_zero_mass() {
        let mut rng = seeds::stream(5, &[]);
        for _ in 0..10_000 {
            let a = sample_action(&[0.3, 0.0, 0.7], &mut rng);
            assert_ne!(a, 1);
        }
        assert_eq!(sample_action(&[0.0, 0.0, 1.0], &mut rng), 2);
        assert_eq!(greedy_action(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(greedy_action(&[0.1, 0.5, 0.4]), 1);
    }
}
