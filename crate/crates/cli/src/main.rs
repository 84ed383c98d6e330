use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use ppoue::envs::EnvKind;
use ppoue::harness::{self, plot, sweep, Checkpoint, ExperimentConfig, GateMode};

#[derive(Parser)]
#[command(name = "ppoue", version, about = "PPO with uncertainty-aware exploration")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Train only this seed instead of every configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint with deterministic mean actions.
    Eval(EvalArgs),
    /// Train and evaluate every (U, seed) pair and aggregate per U.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Ratio uncertainty levels to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.9, 0.96, 0.98, 0.99, 1.0])]
        uncertainties: Vec<f64>,
    },
    /// Render SVG figures from metrics and sweep CSV files.
    Plot {
        /// Metrics CSV (per-run file or a sweep's metrics.csv).
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// Sweep summary CSV for the test-return figure.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Directory for the figures.
        #[arg(long, env = "PPOUE_OUTPUT_DIR", default_value = "runs")]
        output_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// 2e5 steps, 5 seeds.
    Desk,
    /// 1e6 steps, 10 seeds.
    Full,
}

/// Experiment settings. Precedence: flags, then the config file, then the
/// profile.
#[derive(Args)]
struct ConfigArgs {
    /// TOML file with any subset of the configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// pendulum, point-mass or lqr.
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    train_horizon: Option<usize>,
    #[arg(long)]
    test_horizon: Option<usize>,
    #[arg(long)]
    update_interval: Option<usize>,
    /// Ratio uncertainty level U in [0, 1]; 1 disables gating.
    #[arg(long)]
    uncertainty: Option<f64>,
    #[arg(long)]
    initial_uncertainty: Option<f64>,
    #[arg(long)]
    initial_threshold: Option<f64>,
    #[arg(long)]
    clip_epsilon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    log_std_start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    log_std_end: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden_sizes: Option<Vec<usize>>,
    #[arg(long)]
    actor_head_gain: Option<f64>,
    #[arg(long)]
    critic_head_gain: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gae_lambda: Option<f64>,
    #[arg(long)]
    normalize_advantages: Option<bool>,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    value_loss_coeff: Option<f64>,
    /// 0 disables gradient-norm clipping.
    #[arg(long)]
    max_grad_norm: Option<f64>,
    /// Drop mean-action steps from the surrogate objective.
    #[arg(long)]
    mask_exploit: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    critic_learning_rate: Option<f64>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_epsilon: Option<f64>,
    #[arg(long)]
    ratio_denom_guard: Option<f64>,
    /// enabled or ablated.
    #[arg(long)]
    gate: Option<GateMode>,
    #[arg(long, env = "PPOUE_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $args:ident, $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = v; } )*
    };
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match self.profile {
            Some(Profile::Full) => ExperimentConfig::full(),
            Some(Profile::Desk) | None => ExperimentConfig::desk(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg = cfg
                .overlay_toml(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
        }
        apply!(
            cfg,
            self,
            env,
            total_steps,
            train_horizon,
            test_horizon,
            update_interval,
            uncertainty,
            initial_uncertainty,
            initial_threshold,
            clip_epsilon,
            epochs,
            log_std_start,
            log_std_end,
            seeds,
            eval_episodes,
            hidden_sizes,
            actor_head_gain,
            critic_head_gain,
            gamma,
            gae_lambda,
            normalize_advantages,
            minibatch_size,
            value_loss_coeff,
            max_grad_norm,
            mask_exploit,
            learning_rate,
            critic_learning_rate,
            adam_beta1,
            adam_beta2,
            adam_epsilon,
            ratio_denom_guard,
            gate,
            output_dir,
        );
        cfg.validate().context("invalid configuration")?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint JSON written by `train`.
    #[arg(long, required_unless_present = "random")]
    checkpoint: Option<PathBuf>,
    /// Environment; defaults to the checkpoint's.
    #[arg(long)]
    env: Option<EnvKind>,
    /// Episode horizon.
    #[arg(long, default_value_t = 2048)]
    horizon: usize,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Evaluation seed; defaults to the checkpoint's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate a uniform random policy instead of a checkpoint.
    #[arg(long, requires = "env")]
    random: bool,
    /// Also write the report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn run_file(dir: &Path, kind: &str, env: EnvKind, seed: u64, ext: &str) -> PathBuf {
    dir.join(format!("{kind}_{env}_s{seed}.{ext}"))
}

fn cmd_train(cfg: &ExperimentConfig, only: Option<u64>) -> anyhow::Result<bool> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    let seeds = only.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let mut all_ok = true;
    for seed in seeds {
        let metrics = run_file(&cfg.output_dir, "metrics", cfg.env, seed, "csv");
        match harness::train(cfg, seed) {
            Ok(out) => {
                harness::save_metrics(&out.rows, &metrics)?;
                let ckpt = run_file(&cfg.output_dir, "checkpoint", cfg.env, seed, "json");
                out.checkpoint.save(&ckpt)?;
                let last = out.rows.iter().rev().find_map(|r| r.r_train);
                println!(
                    "seed {seed}: {} updates, final R_train {last:?}, wrote {}",
                    out.rows.len(),
                    ckpt.display()
                );
            }
            Err(fault) => {
                harness::save_metrics(&fault.rows, &metrics)?;
                error!("{fault}; partial metrics in {}", metrics.display());
                all_ok = false;
            }
        }
    }
    Ok(all_ok)
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let report = if args.random {
        let env = args.env.expect("clap enforces --env with --random");
        harness::evaluate_random(env, args.horizon, args.episodes, args.seed.unwrap_or(0))?
    } else {
        let path = args.checkpoint.as_ref().expect("clap enforces --checkpoint");
        let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let env = args.env.unwrap_or(ckpt.env);
        harness::evaluate(&ckpt, env, args.horizon, args.episodes, args.seed.unwrap_or(ckpt.seed))?
    };
    println!(
        "R_test {:.4} +- {:.4} over {} episodes (horizon {})",
        report.mean,
        report.std,
        report.returns.len(),
        report.horizon
    );
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, uncertainties: &[f64]) -> anyhow::Result<bool> {
    let result = sweep::sweep(cfg, uncertainties, &cfg.seeds)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    let files = sweep::write_sweep(&result, &cfg.output_dir)?;
    println!(
        "{:<14} {:>12} {:>10} {:>8} {:>8} {:>6}",
        "scheme", "R_test", "std", "PU", "explore", "failed"
    );
    for s in &result.summary {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<14} {:>12} {:>10} {:>8} {:>8} {:>6}",
            s.scheme,
            f(s.r_test_mean),
            f(s.r_test_std),
            f(s.pu_mean),
            f(s.explore_mean),
            s.failed
        );
    }
    match result.pu_spearman() {
        Some(rho) => println!("Spearman(U, PU) = {rho:.4}"),
        None => println!("Spearman(U, PU) undefined"),
    }
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(result.cells.iter().all(|c| c.ok))
}

fn cmd_plot(metrics: &[PathBuf], summary: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for path in metrics {
        rows.extend(harness::load_metrics(path).with_context(|| format!("reading {}", path.display()))?);
    }
    let summary = match summary {
        Some(p) => {
            let file = std::fs::File::open(p).with_context(|| format!("reading {}", p.display()))?;
            Some(harness::metrics::read_csv::<sweep::SchemeSummary, _>(file)?)
        }
        None => None,
    };
    for f in plot::emit_plots(&rows, summary.as_deref(), out)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { config, seed } => cmd_train(&config.resolve()?, seed),
        Command::Eval(args) => cmd_eval(&args).map(|()| true),
        Command::Sweep { config, uncertainties } => cmd_sweep(&config.resolve()?, &uncertainties),
        Command::Plot {
            metrics,
            summary,
            output_dir,
        } => cmd_plot(&metrics, summary.as_deref(), &output_dir).map(|()| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
