//! `overbook` — train, evaluate, stress-test and explain double-booking
//! policy ensembles. Every subcommand is driven by one JSON config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use overbook::experiment::{
    self, EvalOptions, ExperimentConfig, ExplainOptions, SensitivityOptions, CHECKPOINT_FILE,
};
use overbook::Action;

#[derive(Parser)]
#[command(
    name = "overbook",
    version,
    about = "Adaptive outpatient double-booking with an RL policy ensemble"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the ensemble; writes curves.csv, coevolution.csv and checkpoint.json.
    Train(TrainArgs),
    /// Score every member and the heuristic baselines; writes results.csv and pareto.csv.
    Eval(EvalArgs),
    /// Re-evaluate members under shifted no-show probabilities; writes sensitivity.csv.
    Sensitivity(SensitivityArgs),
    /// Shapley attributions of one member's booking decisions.
    Explain(ExplainArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 is serial and bitwise reproducible.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    /// Episodes collected per policy per epoch.
    #[arg(long)]
    episodes: Option<usize>,
    /// Daily arrival rate override.
    #[arg(long)]
    lambda: Option<f64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[command(flatten)]
    common: Common,
    /// Trained checkpoint; defaults to <out>/checkpoint.json.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation episodes per policy.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    base: CheckpointArgs,
    /// Include the SB and DB-threshold baselines.
    #[arg(long, action = clap::ArgAction::Set)]
    baselines: Option<bool>,
    /// Also write events.csv for episode 0 of this member (0-based).
    #[arg(long)]
    event_log: Option<usize>,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    base: CheckpointArgs,
    /// Comma-separated no-show probability shifts.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    deltas: Option<Vec<f64>>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    base: CheckpointArgs,
    /// Ensemble member, 0-based.
    #[arg(long)]
    member: usize,
    /// Action to attribute (0 single-book, 1 double-book); both by default.
    #[arg(long)]
    action: Vec<usize>,
    /// Instances attributed per action.
    #[arg(long)]
    samples: Option<usize>,
    /// Background states for the interventional expectation.
    #[arg(long)]
    background: Option<usize>,
    /// Also write one row per attributed instance.
    #[arg(long)]
    per_instance: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
    }
}

impl CheckpointArgs {
    /// Config (only checked against the checkpoint when given explicitly),
    /// output directory and checkpoint path.
    fn resolve(&self) -> Result<(ExperimentConfig, Option<ExperimentConfig>, PathBuf, PathBuf)> {
        // the config file as written is what the checkpoint must match;
        // --seed here only selects the evaluation streams
        let expected = match &self.common.config {
            Some(path) => Some(
                ExperimentConfig::load(path)
                    .with_context(|| format!("loading {}", path.display()))?,
            ),
            None => None,
        };
        let mut cfg = self.common.load()?;
        if let Some(episodes) = self.episodes {
            cfg.eval.episodes = episodes;
        }
        let out = self.common.out_dir(&cfg);
        let ckpt = self
            .checkpoint
            .clone()
            .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
        Ok((cfg, expected, out, ckpt))
    }
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(episodes) = args.episodes {
        cfg.ppo.episodes_per_epoch = episodes;
    }
    if let Some(lambda) = args.lambda {
        cfg.sim.arrival_rate = lambda;
    }
    cfg.validate().context("invalid config")?;
    let out = args.common.out_dir(&cfg);
    let outcome = experiment::run_train(&cfg, &out, args.checkpoint.as_deref())
        .with_context(|| format!("training into {}", out.display()))?;
    println!(
        "trained {} epochs: {} curve rows, {} co-evolution rows; checkpoint {}",
        outcome.epochs,
        outcome.curve_rows,
        outcome.coevolution_rows,
        outcome.checkpoint.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (cfg, expected, out, ckpt) = args.base.resolve()?;
    let mut opts = EvalOptions::from_config(&cfg);
    opts.expected = expected;
    opts.event_log_member = args.event_log;
    if let Some(b) = args.baselines {
        opts.include_baselines = b;
    }
    let reports = experiment::run_eval(&ckpt, &out, &opts).context("evaluation failed")?;
    for r in &reports {
        let fmt = |s: Option<overbook::evalbench::Stat>| {
            s.map_or("-".to_string(), |s| format!("{:.3}", s.mean))
        };
        println!(
            "{:<10} U={} D={} B={} R={}",
            r.label,
            fmt(r.u_bar),
            fmt(r.d_bar),
            fmt(r.b_bar),
            fmt(r.r_slot_mean)
        );
    }
    Ok(())
}

fn sensitivity(args: &SensitivityArgs) -> Result<()> {
    let (cfg, expected, out, ckpt) = args.base.resolve()?;
    let mut opts = SensitivityOptions::from_config(&cfg);
    opts.expected = expected;
    if let Some(d) = &args.deltas {
        opts.deltas = d.clone();
    }
    let rows =
        experiment::run_sensitivity(&ckpt, &out, &opts).context("sensitivity sweep failed")?;
    println!("wrote {} sensitivity rows to {}", rows.len(), out.display());
    Ok(())
}

fn explain(args: &ExplainArgs) -> Result<()> {
    let (cfg, expected, out, ckpt) = args.base.resolve()?;
    let mut opts = ExplainOptions::from_config(&cfg, args.member);
    opts.expected = expected;
    opts.per_instance = args.per_instance;
    if !args.action.is_empty() {
        opts.actions = args
            .action
            .iter()
            .map(|&a| match Action::from_index(a) {
                Some(action @ (Action::SingleBook | Action::DoubleBook)) => Ok(action),
                _ => bail!("--action must be 0 (single-book) or 1 (double-book), got {a}"),
            })
            .collect::<Result<_>>()?;
    }
    if let Some(s) = args.samples {
        opts.samples = s;
    }
    if let Some(b) = args.background {
        opts.background = b;
    }
    let summaries = experiment::run_explain(&ckpt, &out, &opts).context("attribution failed")?;
    for (action, summary) in opts.actions.iter().zip(&summaries) {
        let top = summary
            .iter()
            .max_by(|a, b| a.mean_abs_phi.total_cmp(&b.mean_abs_phi))
            .map_or("-", |s| s.feature_name.as_str());
        println!(
            "action {}: top feature {top}; wrote {}",
            action.index(),
            Path::new(&out)
                .join(experiment::attribution_file(*action))
                .display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Explain(a) => explain(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
