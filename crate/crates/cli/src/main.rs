//! `hackwatch` — drive the synthetic overoptimization lab from the shell.
//!
//! Every command reads an optional JSON config (`--config`), runs over one
//! seed (`--seed`) or the config's seed list, and writes its artifacts under
//! an output root chosen as `--out`, then the config's `out_dir`, then
//! `$HACKWATCH_OUT`, then `./out`.
//!
//! Exit codes: 0 success, 2 bad usage or config, 3 unreadable or
//! inconsistent data, 4 a monitored run stopped early.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hackwatch_cli::{commands, config, CliError, Outcome};
use hackwatch_core::reward::RmKind;

#[derive(Parser)]
#[command(name = "hackwatch", version, about = "A desk-scale reward-hacking laboratory")]
struct Cli {
    /// Experiment config (JSON); defaults apply where absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run a single seed instead of the config's list
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root (overrides config out_dir and $HACKWATCH_OUT)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Standard,
    Inforem,
}

impl From<KindArg> for RmKind {
    fn from(k: KindArg) -> RmKind {
        match k {
            KindArg::Standard => RmKind::Standard,
            KindArg::Inforem => RmKind::InfoRm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a gold RM and SFT policy, then a labeled preference dataset
    GenWorld,

    /// Fit a reward model to each seed's preference pairs
    TrainRm {
        /// Architecture to fit
        #[arg(long, value_enum)]
        kind: KindArg,

        /// Preference pairs (JSONL); defaults to each seed dir's pairs.jsonl
        #[arg(long)]
        data: Option<PathBuf>,

        /// Checkpoint filename within each seed dir
        #[arg(long, default_value = "rm.json")]
        rm_out: String,

        /// Loss-curve filename within each seed dir
        #[arg(long, default_value = "train_curve.csv")]
        curve_out: String,
    },

    /// Optimize a policy against a trained checkpoint, logging proxy vs gold
    RunRl {
        /// Proxy reward checkpoint to optimize against
        #[arg(long)]
        rm: PathBuf,

        /// Watch the run with a shift detector in the proxy's latent space
        #[arg(long)]
        monitor: bool,

        /// Use this checkpoint's latent space for monitoring instead
        #[arg(long)]
        monitor_rm: Option<PathBuf>,

        /// Trace filename within each seed dir
        #[arg(long, default_value = "trace.csv")]
        trace_out: String,

        /// Run-metadata filename within each seed dir
        #[arg(long, default_value = "run.json")]
        meta_out: String,

        /// Also write before/after latent clouds (needs a monitor)
        #[arg(long)]
        dump_clouds: bool,
    },

    /// Score distribution shift between two latent clouds
    Detect {
        /// JSONL cloud of pre-optimization latents (lines tagged "before")
        #[arg(long)]
        before: PathBuf,

        /// JSONL cloud of post-optimization latents (lines tagged "after")
        #[arg(long)]
        after: PathBuf,

        /// Clustering radius (defaults from config)
        #[arg(long)]
        eps: Option<f64>,

        /// Core-point threshold, neighbors including self (defaults from config)
        #[arg(long)]
        min_samples: Option<usize>,

        /// Drop unclustered points instead of scoring them as a pseudo-cluster
        #[arg(long)]
        exclude_noise: bool,

        /// Z-score both clouds by the before-cloud's statistics first
        #[arg(long)]
        standardize: bool,

        /// Also write a 2-D PCA projection of both clouds to <out>/proj.csv
        #[arg(long)]
        project: bool,
    },

    /// Summarize finished runs into report.json and summary.csv
    Report {
        /// Run directories, each holding a trace.csv
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    let config = config::ExperimentConfig::load(cli.config.as_deref())?;
    let seeds = match cli.seed {
        Some(s) => vec![s],
        None => config.seeds(),
    };
    let out_root = cli
        .out
        .or_else(|| config.out_dir.clone().map(PathBuf::from))
        .or_else(|| std::env::var_os("HACKWATCH_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = commands::Ctx { config, seeds, out_root };

    match cli.command {
        Command::GenWorld => commands::gen_world(&ctx),
        Command::TrainRm { kind, data, rm_out, curve_out } => {
            commands::train(&ctx, kind.into(), data.as_deref(), &rm_out, &curve_out)
        }
        Command::RunRl { rm, monitor, monitor_rm, trace_out, meta_out, dump_clouds } => {
            commands::run_rl(
                &ctx,
                &rm,
                monitor,
                monitor_rm.as_deref(),
                &trace_out,
                &meta_out,
                dump_clouds,
            )
        }
        Command::Detect { before, after, eps, min_samples, exclude_noise, standardize, project } => {
            commands::detect(
                &ctx,
                &before,
                &after,
                eps,
                min_samples,
                exclude_noise,
                standardize,
                project,
            )
        }
        Command::Report { dirs } => commands::report(&ctx, &dirs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::EarlyStopped) => ExitCode::from(4),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
