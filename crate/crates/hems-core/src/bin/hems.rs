//! Command-line front end for the energy-management pipeline: synthesize
//! traces, fit the thermal surrogate, generate expert demonstrations, train
//! the inverse-RL agent or the explicit-reward baseline, and evaluate or
//! compare controllers. Every flag can also come from a JSON config file;
//! an explicit flag wins over the file, the file over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hems_core::airl::AirlConfig;
use hems_core::bench::{
    dp_oracle, evaluate, train_ppo_explicit, write_metrics_csv, write_timeseries_csv, Controller,
    DpConfig, Evaluation, ExpertController, Metrics, PolicyController, RuleConfig, RuleController,
};
use hems_core::env::{Env, EnvConfig};
use hems_core::mpc::{generate_demonstrations, MpcConfig};
use hems_core::ppo::{train_hmpc_airl, write_training_log, GaussianPolicy, PpoConfig};
use hems_core::surrogate::{collect_samples, train_surrogate, Surrogate};
use hems_core::traces::{synth_traces, SynthProfile, TraceSet};
use hems_core::demos::DemoSet;
use hems_core::{Error, Result};

// --- configuration file ------------------------------------------------------

/// Knobs for surrogate fitting that have no module config of their own.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SurrogateSection {
    /// Random interaction steps collected before fitting.
    samples: usize,
    /// Network shape, inputs to output (must be 3 ... 1).
    arch: Vec<usize>,
    /// Full passes over the training split.
    epochs: usize,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        Self {
            samples: 4000,
            arch: vec![3, 32, 32, 1],
            epochs: 80,
        }
    }
}

/// Everything the pipeline can be told from one JSON file. Sections mirror
/// the library configs; missing sections fall back to their defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    env: EnvConfig,
    synth: SynthProfile,
    surrogate: SurrogateSection,
    mpc: MpcConfig,
    airl: AirlConfig,
    ppo: PpoConfig,
    rule: RuleConfig,
    dp: DpConfig,
    /// Comfort weight of the explicit-reward baseline ($/°C).
    beta: f64,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            synth: SynthProfile::default(),
            surrogate: SurrogateSection::default(),
            mpc: MpcConfig::default(),
            airl: AirlConfig::default(),
            ppo: PpoConfig::default(),
            rule: RuleConfig::default(),
            dp: DpConfig::default(),
            beta: 1.0,
        }
    }
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => FileConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("config {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.synth.validate()?;
        self.mpc.validate()?;
        self.airl.validate()?;
        self.ppo.validate()?;
        self.rule.validate()?;
        self.dp.validate()?;
        if self.beta < 0.0 {
            return Err(Error::config(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

// --- argument surface ---------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "hems",
    about = "Smart-home energy management: MPC expert, inverse-RL training, baselines",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; explicit flags override its values.
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    /// Seed for every random choice this command makes.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic summer trace CSV.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of days (24 slots each).
        #[arg(long, default_value_t = 30)]
        days: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the neural thermal surrogate from environment interaction.
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
        /// Trace CSV driving the interaction episodes.
        #[arg(long)]
        traces: PathBuf,
        /// Interaction steps to collect (overrides config).
        #[arg(long)]
        samples: Option<usize>,
        /// Training epochs (overrides config).
        #[arg(long)]
        epochs: Option<usize>,
        /// Output JSON model path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate expert demonstrations with the hierarchical MPC.
    GenExpert {
        #[command(flatten)]
        common: Common,
        /// Trace CSV the expert controls.
        #[arg(long)]
        traces: PathBuf,
        /// Surrogate JSON from train-surrogate.
        #[arg(long)]
        surrogate: PathBuf,
        /// Days of demonstrations to record (24 transitions per day);
        /// overrides the config's expert_slots.
        #[arg(long)]
        expert_days: Option<usize>,
        /// Output demonstration CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the inverse-RL agent against expert demonstrations.
    Train {
        #[command(flatten)]
        common: Common,
        /// Trace CSV used for policy rollouts.
        #[arg(long)]
        traces: PathBuf,
        /// Expert demonstration CSV.
        #[arg(long)]
        demos: PathBuf,
        /// Training iterations (overrides config).
        #[arg(long)]
        iterations: Option<usize>,
        /// Run directory for logs, snapshots, and the final policy.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the explicit-reward PPO baseline (no demonstrations).
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        /// Trace CSV used for policy rollouts.
        #[arg(long)]
        traces: PathBuf,
        /// Training iterations (overrides config).
        #[arg(long)]
        iterations: Option<usize>,
        /// Comfort weight in the explicit reward (overrides config).
        #[arg(long)]
        beta: Option<f64>,
        /// Run directory for logs, snapshots, and the final policy.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one controller on a trace, noise-free and deterministic.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Trace CSV to evaluate on.
        #[arg(long)]
        traces: PathBuf,
        /// Controller: rule, expert, or policy.
        #[arg(long)]
        controller: ControllerKind,
        /// Policy JSON (for --controller policy).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Surrogate JSON (for --controller expert).
        #[arg(long)]
        surrogate: Option<PathBuf>,
        /// Run directory for metrics.csv and timeseries.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every controller on a test trace and emit a comparison CSV.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Test trace CSV.
        #[arg(long)]
        traces: PathBuf,
        /// Surrogate JSON (drives the MPC expert).
        #[arg(long)]
        surrogate: PathBuf,
        /// Trained inverse-RL policy JSON.
        #[arg(long)]
        airl_policy: PathBuf,
        /// Trained explicit-reward baseline policy JSON.
        #[arg(long)]
        ppo_policy: PathBuf,
        /// Run directory for the comparison CSV and per-controller tables.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ControllerKind {
    Rule,
    Expert,
    Policy,
}

// --- helpers ------------------------------------------------------------------

fn load_traces(path: &Path) -> Result<Arc<TraceSet>> {
    let ts = TraceSet::load_csv(path)
        .map_err(|e| Error::parse(format!("traces {}: {e}", path.display())))?;
    Ok(Arc::new(ts))
}

fn load_surrogate(path: &Path) -> Result<Surrogate> {
    Surrogate::load_json(path)
        .map_err(|e| Error::parse(format!("surrogate {}: {e}", path.display())))
}

fn load_policy(path: &Path) -> Result<GaussianPolicy> {
    GaussianPolicy::load_json(path)
        .map_err(|e| Error::parse(format!("policy {}: {e}", path.display())))
}

fn load_demos(path: &Path) -> Result<DemoSet> {
    DemoSet::load_csv(path).map_err(|e| Error::parse(format!("demos {}: {e}", path.display())))
}

/// Creates the run directory and records the fully resolved configuration,
/// so a run is reproducible from its own artifacts.
fn init_run_dir(dir: &Path, cfg: &FileConfig, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::config(format!("out {}: {e}", dir.display())))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        seed: u64,
        #[serde(flatten)]
        config: &'a FileConfig,
    }
    let text = serde_json::to_string_pretty(&Resolved { seed, config: cfg })?;
    fs::write(dir.join("config.json"), text)?;
    Ok(())
}

fn write_evaluation(dir: &Path, label: &str, eval: &Evaluation) -> Result<()> {
    write_metrics_csv(dir.join("metrics.csv"), &[(label, eval.metrics)])?;
    write_timeseries_csv(dir.join("timeseries.csv"), &eval.per_slot)?;
    Ok(())
}

fn print_metrics(label: &str, m: &Metrics) {
    println!("{label:12} tec {:10.4}  mtd {:8.5}  total_dev {:10.4}", m.tec, m.mtd, m.total_dev);
}

/// Shared tail of both training subcommands: per-iteration console line,
/// periodic policy snapshots, final policy and training log in the run dir.
fn run_training(
    dir: &Path,
    ppo_cfg: &PpoConfig,
    train: impl FnOnce(
        &mut dyn FnMut(usize, &GaussianPolicy, &hems_core::ppo::IterLog) -> Result<()>,
    ) -> Result<(GaussianPolicy, Vec<hems_core::ppo::IterLog>)>,
) -> Result<GaussianPolicy> {
    let snapshot_every = ppo_cfg.snapshot_every;
    let iterations = ppo_cfg.iterations;
    let mut on_iter = |i: usize, policy: &GaussianPolicy, log: &hems_core::ppo::IterLog| {
        let disc = log
            .disc_loss
            .map(|d| format!("disc {d:7.4}  "))
            .unwrap_or_default();
        println!(
            "iter {:4}/{iterations}  {disc}reward {:10.4}  tec {:9.4}  mtd {:7.4}",
            i + 1,
            log.mean_agent_reward,
            log.eval_tec,
            log.eval_mtd
        );
        if snapshot_every > 0 && (i + 1) % snapshot_every == 0 {
            policy.save_json(dir.join(format!("policy_{:04}.json", i + 1)))?;
        }
        Ok(())
    };
    let (policy, logs) = train(&mut on_iter)?;
    policy.save_json(dir.join("policy.json"))?;
    write_training_log(dir.join("training_log.csv"), &logs)?;
    Ok(policy)
}

// --- subcommand bodies ----------------------------------------------------------

fn cmd_synth(common: &Common, days: usize, out: &Path) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let traces = synth_traces(common.seed, days, &cfg.synth)?;
    traces.write_csv(out)?;
    println!("wrote {} slots ({} days) to {}", traces.len(), traces.days(), out.display());
    Ok(())
}

fn cmd_train_surrogate(
    common: &Common,
    traces: &Path,
    samples: Option<usize>,
    epochs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let traces = load_traces(traces)?;
    let samples = samples.unwrap_or(cfg.surrogate.samples);
    let epochs = epochs.unwrap_or(cfg.surrogate.epochs);
    let mut env = Env::new(cfg.env.clone(), traces)?;
    let data = collect_samples(&mut env, samples, common.seed)?;
    let (model, rmse) = train_surrogate(&data, &cfg.surrogate.arch, epochs, common.seed)?;
    model.save_json(out)?;
    println!("holdout rmse {rmse:.5} °C over {samples} samples; model at {}", out.display());
    Ok(())
}

fn cmd_gen_expert(
    common: &Common,
    traces: &Path,
    surrogate: &Path,
    expert_days: Option<usize>,
    out: &Path,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let traces = load_traces(traces)?;
    let surrogate = load_surrogate(surrogate)?;
    let mut mpc = cfg.mpc.clone();
    if let Some(days) = expert_days {
        mpc.expert_slots = days * hems_core::traces::SLOTS_PER_DAY;
    }
    let mut env = Env::new(cfg.env.clone(), traces)?;
    let demos = generate_demonstrations(&mut env, &surrogate, &mpc, common.seed)?;
    demos.write_csv(out)?;
    println!("wrote {} expert transitions to {}", demos.len(), out.display());
    Ok(())
}

fn cmd_train(
    common: &Common,
    traces: &Path,
    demos: &Path,
    iterations: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut cfg = FileConfig::load(common.config.as_deref())?;
    if let Some(n) = iterations {
        cfg.ppo.iterations = n;
    }
    let traces = load_traces(traces)?;
    let demos = load_demos(demos)?;
    init_run_dir(out, &cfg, common.seed)?;
    let ppo_cfg = cfg.ppo.clone();
    let policy = run_training(out, &cfg.ppo, |on_iter| {
        let trained = train_hmpc_airl(
            &cfg.env,
            Arc::clone(&traces),
            &demos,
            &cfg.airl,
            &ppo_cfg,
            common.seed,
            on_iter,
        )?;
        trained.reward_net.save_json(out.join("reward_net.json"))?;
        Ok((trained.policy, trained.logs))
    })?;
    let eval = evaluate(&cfg.env, &traces, &mut PolicyController::new(policy), common.seed)?;
    write_evaluation(out, "airl", &eval)?;
    print_metrics("airl", &eval.metrics);
    Ok(())
}

fn cmd_train_baseline(
    common: &Common,
    traces: &Path,
    iterations: Option<usize>,
    beta: Option<f64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = FileConfig::load(common.config.as_deref())?;
    if let Some(n) = iterations {
        cfg.ppo.iterations = n;
    }
    if let Some(b) = beta {
        cfg.beta = b;
    }
    let traces = load_traces(traces)?;
    init_run_dir(out, &cfg, common.seed)?;
    let ppo_cfg = cfg.ppo.clone();
    let beta = cfg.beta;
    let policy = run_training(out, &cfg.ppo, |on_iter| {
        train_ppo_explicit(&cfg.env, Arc::clone(&traces), &ppo_cfg, beta, common.seed, on_iter)
    })?;
    let eval = evaluate(&cfg.env, &traces, &mut PolicyController::new(policy), common.seed)?;
    write_evaluation(out, "ppo-explicit", &eval)?;
    print_metrics("ppo-explicit", &eval.metrics);
    Ok(())
}

fn cmd_evaluate(
    common: &Common,
    traces: &Path,
    kind: ControllerKind,
    policy: Option<&Path>,
    surrogate: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let traces = load_traces(traces)?;
    let mut controller: Box<dyn Controller> = match kind {
        ControllerKind::Rule => {
            Box::new(RuleController::new(cfg.rule.clone(), &cfg.env, &traces)?)
        }
        ControllerKind::Expert => {
            let path = surrogate.ok_or_else(|| {
                Error::config("--controller expert requires --surrogate".to_string())
            })?;
            Box::new(ExpertController::new(load_surrogate(path)?, cfg.mpc.clone()))
        }
        ControllerKind::Policy => {
            let path = policy.ok_or_else(|| {
                Error::config("--controller policy requires --policy".to_string())
            })?;
            Box::new(PolicyController::new(load_policy(path)?))
        }
    };
    init_run_dir(out, &cfg, common.seed)?;
    let label = match kind {
        ControllerKind::Rule => "rule",
        ControllerKind::Expert => "expert",
        ControllerKind::Policy => "policy",
    };
    let eval = evaluate(&cfg.env, &traces, controller.as_mut(), common.seed)?;
    write_evaluation(out, label, &eval)?;
    print_metrics(label, &eval.metrics);
    Ok(())
}

fn cmd_compare(
    common: &Common,
    traces: &Path,
    surrogate: &Path,
    airl_policy: &Path,
    ppo_policy: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let traces = load_traces(traces)?;
    let surrogate = load_surrogate(surrogate)?;
    let airl = load_policy(airl_policy)?;
    let ppo = load_policy(ppo_policy)?;
    init_run_dir(out, &cfg, common.seed)?;

    let mut rows: Vec<(&str, Metrics)> = Vec::new();
    let run = |label: &'static str,
               controller: &mut dyn Controller,
               rows: &mut Vec<(&str, Metrics)>|
     -> Result<()> {
        let eval = evaluate(&cfg.env, &traces, controller, common.seed)?;
        write_timeseries_csv(out.join(format!("timeseries_{label}.csv")), &eval.per_slot)?;
        print_metrics(label, &eval.metrics);
        rows.push((label, eval.metrics));
        Ok(())
    };
    run("rule", &mut RuleController::new(cfg.rule.clone(), &cfg.env, &traces)?, &mut rows)?;
    run("expert", &mut ExpertController::new(surrogate, cfg.mpc.clone()), &mut rows)?;
    run("airl", &mut PolicyController::new(airl), &mut rows)?;
    run("ppo-explicit", &mut PolicyController::new(ppo), &mut rows)?;

    let dp = dp_oracle(&cfg.env, &traces, &cfg.dp)?;
    write_timeseries_csv(out.join("timeseries_dp-oracle.csv"), &dp.evaluation.per_slot)?;
    print_metrics("dp-oracle", &dp.evaluation.metrics);
    println!("dp-oracle comfort weight: {} $/°C", dp.comfort_weight);
    rows.push(("dp-oracle", dp.evaluation.metrics));

    write_metrics_csv(out.join("metrics.csv"), &rows)?;
    println!("comparison written to {}", out.join("metrics.csv").display());
    Ok(())
}

// --- entry ----------------------------------------------------------------------

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { common, days, out } => cmd_synth(common, *days, out),
        Command::TrainSurrogate {
            common,
            traces,
            samples,
            epochs,
            out,
        } => cmd_train_surrogate(common, traces, *samples, *epochs, out),
        Command::GenExpert {
            common,
            traces,
            surrogate,
            expert_days,
            out,
        } => cmd_gen_expert(common, traces, surrogate, *expert_days, out),
        Command::Train {
            common,
            traces,
            demos,
            iterations,
            out,
        } => cmd_train(common, traces, demos, *iterations, out),
        Command::TrainBaseline {
            common,
            traces,
            iterations,
            beta,
            out,
        } => cmd_train_baseline(common, traces, *iterations, *beta, out),
        Command::Evaluate {
            common,
            traces,
            controller,
            policy,
            surrogate,
            out,
        } => cmd_evaluate(
            common,
            traces,
            *controller,
            policy.as_deref(),
            surrogate.as_deref(),
            out,
        ),
        Command::Compare {
            common,
            traces,
            surrogate,
            airl_policy,
            ppo_policy,
            out,
        } => cmd_compare(common, traces, surrogate, airl_policy, ppo_policy, out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
