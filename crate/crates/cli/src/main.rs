use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qbound_core::harness::{run_experiment, Beta, ExperimentConfig, ExperimentKind};
use qbound_core::transfer::TransferSpec;

#[derive(Parser)]
#[command(name = "qbound", version, about = "Bounds, condition checks and clipping experiments for composed tabular RL tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Standard,
    #[value(alias = "entropy-regularized")]
    Soft,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the primitive tasks (and the composite, if a transfer is given).
    Solve(Common),
    /// Check a transfer function against the convex and concave conditions.
    CheckFn {
        #[command(flatten)]
        common: Common,
        /// Expression in x1, x2, ...; replaces the config's transfer.
        #[arg(long)]
        expr: Option<String>,
        #[arg(long)]
        arity: Option<usize>,
        #[arg(long, value_enum)]
        regime: Option<RegimeArg>,
        /// Inverse temperature for the soft regime.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Bound report for a composite task, verified against a direct solve.
    Bound(Common),
    /// One Q-learning run with the configured clipping mode.
    Learn(Common),
    /// Composite/direct gap and policy KL across slip probabilities.
    SweepStochasticity(Common),
    /// The same statistics across random reward layouts of varying density.
    SweepSparsity(Common),
    /// All clipping arms over seeded trials.
    ClipExperiment(Common),
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Solve(_) => ExperimentKind::Solve,
            Command::CheckFn { .. } => ExperimentKind::CheckFn,
            Command::Bound(_) => ExperimentKind::BoundCheck,
            Command::Learn(_) => ExperimentKind::Learn,
            Command::SweepStochasticity(_) => ExperimentKind::StochasticitySweep,
            Command::SweepSparsity(_) => ExperimentKind::SparsitySweep,
            Command::ClipExperiment(_) => ExperimentKind::Clipping,
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Solve(c)
            | Command::Bound(c)
            | Command::Learn(c)
            | Command::SweepStochasticity(c)
            | Command::SweepSparsity(c)
            | Command::ClipExperiment(c) => c,
            Command::CheckFn { common, .. } => common,
        }
    }
}

fn load_config(cmd: &Command) -> Result<ExperimentConfig> {
    let common = cmd.common();
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if matches!(cmd, Command::CheckFn { expr: Some(_), .. }) => ExperimentConfig::new(ExperimentKind::CheckFn, 0),
        None => bail!("--config is required for this subcommand"),
    };
    if cfg.experiment != cmd.kind() {
        bail!("config describes a {} experiment, not {}", cfg.experiment, cmd.kind());
    }
    if let Command::CheckFn {
        expr,
        arity,
        regime,
        beta,
        ..
    } = cmd
    {
        if let Some(e) = expr {
            cfg.transfer = Some(TransferSpec::Expr {
                expr: e.clone(),
                arity: *arity,
            });
        }
        match (regime, beta) {
            (Some(RegimeArg::Standard), Some(_)) => bail!("--beta applies to the soft regime only"),
            (Some(RegimeArg::Standard), None) => cfg.betas = Some(vec![Beta::Infinite]),
            (Some(RegimeArg::Soft), b) => cfg.betas = Some(vec![b.unwrap_or(1.0).to_string().parse()?]),
            (None, Some(b)) => cfg.betas = Some(vec![b.to_string().parse()?]),
            (None, None) => {}
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(tol) = common.tol {
        cfg.tol = tol;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String> {
    let cfg = load_config(&cli.command)?;
    let out = cli
        .command
        .common()
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let summary = run_experiment(&cfg, Path::new(&out)).with_context(|| format!("{} experiment failed", cfg.experiment))?;
    Ok(summary)
}

/// 1 for bad input, 2 when the numerics failed.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<qbound_core::Error>())
        .any(qbound_core::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
