use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::output::{write_csv, ParetoRow};
use super::{Checkpoint, ExperimentConfig};
use crate::coevolve::{build_ensemble, train, Member};
use crate::domain::{Action, Observation, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::evalbench::{
    episode_event_log, episode_seed, evaluate_policy, pareto_front, sensitivity_sweep,
    visited_observations, BaselinePolicy, DecisionSource, MetricsReport, ResultRow, SensitivityRow,
};
use crate::explain::{explain_action, summarize_attributions, Attribution, FeatureSummary};
use crate::seeds;

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const COEVOLUTION_FILE: &str = "coevolution.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const PARETO_FILE: &str = "pareto.csv";
pub const SENSITIVITY_FILE: &str = "sensitivity.csv";
pub const EVENTS_FILE: &str = "events.csv";
/// Marker left behind when training stops early.
pub const PARTIAL_FILE: &str = "PARTIAL";

pub fn attribution_file(action: Action) -> String {
    format!("attribution_action{}.csv", action.index())
}

pub fn attribution_instances_file(action: Action) -> String {
    format!("attribution_instances_action{}.csv", action.index())
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?
        .install(f)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn member_label(m: &Member) -> String {
    format!("MPPPO {}", m.id + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub epochs: usize,
    pub checkpoint: PathBuf,
    pub curve_rows: usize,
    pub coevolution_rows: usize,
}

/// Train (or resume) the ensemble and write curves, the co-evolution log and
/// a final checkpoint into `out_dir`.
///
/// If training fails part-way, the logs gathered so far are still written and
/// a `PARTIAL` marker explains where it stopped.
pub fn run_train(
    config: &ExperimentConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    ensure_dir(out_dir)?;
    config.save(&out_dir.join(CONFIG_FILE))?;
    let (mut ensemble, mut curves, mut coevolution) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.ensure_matches(config)?;
            (ckpt.ensemble, ckpt.curves, ckpt.coevolution)
        }
        None => (
            build_ensemble(
                &config.weights,
                &config.network,
                config.coevolution.kl_sample_size,
                config.seed,
            )?,
            Vec::new(),
            Vec::new(),
        ),
    };
    let world = config.world()?;
    let result = with_threads(config.threads, || {
        train(
            &mut ensemble,
            &world,
            &config.ppo,
            &config.coevolution,
            config.epochs,
            |_, report| {
                curves.extend(report.curves.iter().cloned());
                coevolution.extend(report.coevolution.iter().cloned());
                Ok(())
            },
        )
    });
    write_csv(&out_dir.join(CURVES_FILE), &curves)?;
    write_csv(&out_dir.join(COEVOLUTION_FILE), &coevolution)?;
    let marker = out_dir.join(PARTIAL_FILE);
    if let Err(e) = result {
        let completed = curves.last().map_or(0, |r| r.epoch);
        let note = format!("training stopped after epoch {completed}: {e}\n");
        std::fs::write(&marker, note).map_err(|io| Error::io(&marker, io))?;
        return Err(e);
    }
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let outcome = TrainOutcome {
        epochs: ensemble.epoch,
        checkpoint: out_dir.join(CHECKPOINT_FILE),
        curve_rows: curves.len(),
        coevolution_rows: coevolution.len(),
    };
    Checkpoint::new(config.clone(), ensemble, curves, coevolution).save(&outcome.checkpoint)?;
    Ok(outcome)
}

fn open_checkpoint(path: &Path, expected: Option<&ExperimentConfig>) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if let Some(cfg) = expected {
        ckpt.ensure_matches(cfg)?;
    }
    Ok(ckpt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    pub include_baselines: bool,
    pub threads: usize,
    /// Also write the event log of episode 0 for this member.
    pub event_log_member: Option<usize>,
    /// Config the checkpoint must have been trained with.
    pub expected: Option<ExperimentConfig>,
}

impl EvalOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        EvalOptions {
            episodes: cfg.eval.episodes,
            seed: cfg.seed,
            include_baselines: cfg.eval.include_baselines,
            threads: cfg.threads,
            event_log_member: None,
            expected: None,
        }
    }
}

/// Evaluate every member (and optionally the heuristics) on the same
/// episode seeds; writes the results table and the members' Pareto front.
pub fn run_eval(
    checkpoint: &Path,
    out_dir: &Path,
    opts: &EvalOptions,
) -> Result<Vec<MetricsReport>> {
    let ckpt = open_checkpoint(checkpoint, opts.expected.as_ref())?;
    let cfg = &ckpt.config;
    let world = cfg.world()?;
    ensure_dir(out_dir)?;
    let members = &ckpt.ensemble.members;
    if let Some(m) = opts.event_log_member {
        if m >= members.len() {
            return Err(Error::Config(format!(
                "member {m} out of range (ensemble has {})",
                members.len()
            )));
        }
    }
    let sample = cfg.eval.sample_actions;
    let reports = with_threads(opts.threads, || {
        let mut reports = members
            .iter()
            .map(|m| {
                let source = DecisionSource::Policy {
                    actor: &m.net.actor,
                    sample,
                };
                evaluate_policy(
                    &world,
                    member_label(m),
                    source,
                    opts.episodes,
                    opts.seed,
                    m.weights,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if opts.include_baselines {
            for rule in BaselinePolicy::standard_set() {
                reports.push(evaluate_policy(
                    &world,
                    rule.label(),
                    DecisionSource::Baseline(rule),
                    opts.episodes,
                    opts.seed,
                    cfg.eval.baseline_weights,
                )?);
            }
        }
        Ok(reports)
    })?;
    let rows: Vec<ResultRow> = reports.iter().map(MetricsReport::to_row).collect();
    write_csv(&out_dir.join(RESULTS_FILE), &rows)?;

    let scored: Vec<(&MetricsReport, [f64; 3])> = reports[..members.len()]
        .iter()
        .filter_map(|r| r.objectives().map(|o| (r, o)))
        .collect();
    let points: Vec<[f64; 3]> = scored.iter().map(|(_, o)| *o).collect();
    let front: Vec<ParetoRow> = pareto_front(&points)
        .into_iter()
        .map(|i| {
            let (r, o) = scored[i];
            ParetoRow {
                policy: r.label.clone(),
                u_mean: o[0],
                d_mean: r.d_bar.map(|d| d.mean),
                b_mean: o[2],
            }
        })
        .collect();
    write_csv(&out_dir.join(PARETO_FILE), &front)?;

    if let Some(m) = opts.event_log_member {
        let actor = &members[m].net.actor;
        let source = DecisionSource::Policy { actor, sample };
        let log = episode_event_log(world.clone(), source, episode_seed(opts.seed, 0))?;
        write_csv(&out_dir.join(EVENTS_FILE), &log)?;
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityOptions {
    pub deltas: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
    pub threads: usize,
    pub expected: Option<ExperimentConfig>,
}

impl SensitivityOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        SensitivityOptions {
            deltas: cfg.eval.deltas.clone(),
            episodes: cfg.eval.episodes,
            seed: cfg.seed,
            threads: cfg.threads,
            expected: None,
        }
    }
}

/// Weighted-reward sensitivity of every member to shifted no-show
/// probabilities; one row per (member, delta) including the delta-0 reference.
pub fn run_sensitivity(
    checkpoint: &Path,
    out_dir: &Path,
    opts: &SensitivityOptions,
) -> Result<Vec<SensitivityRow>> {
    let ckpt = open_checkpoint(checkpoint, opts.expected.as_ref())?;
    if let Some(d) = opts.deltas.iter().find(|d| !(-1.0..=1.0).contains(*d)) {
        return Err(Error::Config(format!("delta {d} outside [-1, 1]")));
    }
    let world = ckpt.config.world()?;
    let sample = ckpt.config.eval.sample_actions;
    ensure_dir(out_dir)?;
    let rows = with_threads(opts.threads, || {
        let mut rows = Vec::new();
        for m in &ckpt.ensemble.members {
            let source = DecisionSource::Policy {
                actor: &m.net.actor,
                sample,
            };
            rows.extend(sensitivity_sweep(
                &world,
                &member_label(m),
                source,
                m.weights,
                &opts.deltas,
                opts.episodes,
                opts.seed,
            )?);
        }
        Ok(rows)
    })?;
    write_csv(&out_dir.join(SENSITIVITY_FILE), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainOptions {
    pub member: usize,
    pub actions: Vec<Action>,
    pub samples: usize,
    pub background: usize,
    pub seed: u64,
    pub threads: usize,
    /// Also write one row per attributed instance.
    pub per_instance: bool,
    pub expected: Option<ExperimentConfig>,
}

impl ExplainOptions {
    pub fn from_config(cfg: &ExperimentConfig, member: usize) -> Self {
        ExplainOptions {
            member,
            actions: vec![Action::SingleBook, Action::DoubleBook],
            samples: cfg.eval.explain_samples,
            background: cfg.eval.explain_background,
            seed: cfg.seed,
            threads: cfg.threads,
            per_instance: false,
            expected: None,
        }
    }
}

/// States a member visits under greedy play, shuffled, split into
/// (background, instances).
fn attribution_states(
    ckpt: &Checkpoint,
    member: &Member,
    opts: &ExplainOptions,
) -> Result<(Vec<Observation>, Vec<Observation>)> {
    let world = ckpt.config.world()?;
    let needed = opts.background + opts.samples;
    let source = DecisionSource::greedy(&member.net.actor);
    let mut states = Vec::new();
    // a handful of episodes is plenty; the cap only guards degenerate configs
    for k in 0..64 {
        if states.len() >= needed {
            break;
        }
        states.extend(visited_observations(
            world.clone(),
            source,
            episode_seed(opts.seed, k),
        )?);
    }
    if states.len() < 2 {
        return Err(Error::Contract(
            "too few visited states to attribute".into(),
        ));
    }
    let mut rng = seeds::stream(opts.seed, &[seeds::EXPLAIN, member.id as u64]);
    states.shuffle(&mut rng);
    let background_len = opts.background.min(states.len() / 2).max(1);
    let instances = states.split_off(background_len);
    states.truncate(background_len);
    let take = opts.samples.min(instances.len());
    Ok((states, instances[..take].to_vec()))
}

fn write_instances(path: &Path, action: Action, attributions: &[Attribution]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "instance".to_string(),
        "action".into(),
        "base_value".into(),
        "output".into(),
    ];
    header.extend(FEATURE_NAMES.iter().map(|f| format!("value_{f}")));
    header.extend(FEATURE_NAMES.iter().map(|f| format!("phi_{f}")));
    w.write_record(&header)?;
    for (i, a) in attributions.iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            action.index().to_string(),
            a.base_value.to_string(),
            a.output.to_string(),
        ];
        rec.extend(a.instance.iter().map(f64::to_string));
        rec.extend(a.phi.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shapley summaries of one member's booking decisions.
pub fn run_explain(
    checkpoint: &Path,
    out_dir: &Path,
    opts: &ExplainOptions,
) -> Result<Vec<Vec<FeatureSummary>>> {
    let ckpt = open_checkpoint(checkpoint, opts.expected.as_ref())?;
    let members = &ckpt.ensemble.members;
    let member = members.get(opts.member).ok_or_else(|| {
        Error::Config(format!(
            "member {} out of range (ensemble has {})",
            opts.member,
            members.len()
        ))
    })?;
    if opts.actions.is_empty() || opts.actions.contains(&Action::Reject) {
        return Err(Error::Config(
            "attribution actions must be single-book (0) or double-book (1)".into(),
        ));
    }
    if opts.samples == 0 || opts.background == 0 {
        return Err(Error::Config(
            "explain needs positive sample and background sizes".into(),
        ));
    }
    ensure_dir(out_dir)?;
    let (background, instances) = attribution_states(&ckpt, member, opts)?;
    let mut summaries = Vec::new();
    for &action in &opts.actions {
        let attributions = with_threads(opts.threads, || {
            instances
                .par_iter()
                .map(|x| explain_action(&member.net.actor, action, x, &background))
                .collect::<Result<Vec<_>>>()
        })?;
        let summary = summarize_attributions(action, &attributions)?;
        write_csv(&out_dir.join(attribution_file(action)), &summary)?;
        if opts.per_instance {
            write_instances(
                &out_dir.join(attribution_instances_file(action)),
                action,
                &attributions,
            )?;
        }
        summaries.push(summary);
    }
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::NetworkConfig;
    use crate::coevolve::CoEvolutionConfig;
    use crate::domain::WeightVector;
    use crate::experiment::read_csv;
    use crate::ppo::PpoConfig;
    use crate::simenv::SimConfig;

    fn smoke_config() -> ExperimentConfig {
        ExperimentConfig {
            seed: 5,
            epochs: 3,
            sim: SimConfig {
                arrival_rate: 6.0,
                horizon_days: 5,
                slots_per_day: 6,
                topology: vec![vec![2]],
                ..SimConfig::default()
            },
            network: NetworkConfig {
                hidden: vec![8, 8],
                ..NetworkConfig::default()
            },
            ppo: PpoConfig {
                episodes_per_epoch: 1,
                minibatch_size: 32,
                ..PpoConfig::default()
            },
            coevolution: CoEvolutionConfig {
                period: 2,
                kl_sample_size: 64,
                ..CoEvolutionConfig::default()
            },
            weights: WeightVector::default_table()[..4].to_vec(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn resume_matches_straight_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config();
        let straight = dir.path().join("straight");
        run_train(&cfg, &straight, None).unwrap();

        let first = dir.path().join("first");
        let short = ExperimentConfig {
            epochs: 1,
            ..cfg.clone()
        };
        run_train(&short, &first, None).unwrap();
        let resumed = dir.path().join("resumed");
        run_train(&cfg, &resumed, Some(&first.join(CHECKPOINT_FILE))).unwrap();

        for f in [CURVES_FILE, COEVOLUTION_FILE, CHECKPOINT_FILE] {
            assert_eq!(
                std::fs::read(straight.join(f)).unwrap(),
                std::fs::read(resumed.join(f)).unwrap(),
                "{f}"
            );
        }
        let curves: Vec<crate::coevolve::CurveRow> = read_csv(&straight.join(CURVES_FILE)).unwrap();
        assert_eq!(curves.len(), 3 * 4);
    }

    #[test]
    fn resume_refuses_a_different_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config();
        run_train(&cfg, dir.path(), None).unwrap();
        let other = ExperimentConfig { seed: 6, ..cfg };
        let err = run_train(
            &other,
            &dir.path().join("x"),
            Some(&dir.path().join(CHECKPOINT_FILE)),
        )
        .unwrap_err();
        assert!(matches!(err, Error::FingerprintMismatch { .. }));
    }

    #[test]
    fn eval_sensitivity_and_explain_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config();
        run_train(&cfg, dir.path(), None).unwrap();
        let ckpt = dir.path().join(CHECKPOINT_FILE);

        let opts = EvalOptions {
            episodes: 2,
            event_log_member: Some(0),
            ..EvalOptions::from_config(&cfg)
        };
        let reports = run_eval(&ckpt, dir.path(), &opts).unwrap();
        assert_eq!(reports.len(), 4 + 6);
        let rows: Vec<ResultRow> = read_csv(&dir.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(rows.len(), 10);
        let sb = rows.iter().find(|r| r.policy == "SB").unwrap();
        assert_eq!(sb.d_mean, None);
        let front: Vec<ParetoRow> = read_csv(&dir.path().join(PARETO_FILE)).unwrap();
        assert!(!front.is_empty());
        assert!(front.iter().all(|p| p.policy.starts_with("MPPPO")));
        assert!(dir.path().join(EVENTS_FILE).exists());

        let sens = run_sensitivity(
            &ckpt,
            dir.path(),
            &SensitivityOptions {
                episodes: 1,
                ..SensitivityOptions::from_config(&cfg)
            },
        )
        .unwrap();
        assert_eq!(sens.len(), 4 * 5);
        assert!(sens
            .iter()
            .filter(|r| r.delta == 0.0)
            .all(|r| r.rel_change == Some(0.0)));

        let explain = ExplainOptions {
            samples: 3,
            background: 4,
            per_instance: true,
            ..ExplainOptions::from_config(&cfg, 1)
        };
        let summaries = run_explain(&ckpt, dir.path(), &explain).unwrap();
        assert_eq!(summaries.len(), 2);
        assert!(summaries.iter().all(|s| s.len() == 10));
        assert!(dir.path().join("attribution_action0.csv").exists());
        assert!(dir
            .path()
            .join("attribution_instances_action1.csv")
            .exists());

        let bad = ExplainOptions {
            actions: vec![Action::Reject],
            ..explain.clone()
        };
        assert!(run_explain(&ckpt, dir.path(), &bad).is_err());
        let out_of_range = ExplainOptions {
            member: 9,
            ..explain
        };
        assert!(run_explain(&ckpt, dir.path(), &out_of_range).is_err());
    }
}
