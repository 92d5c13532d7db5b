use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use c3rl::runner::{
    emit_results, emit_sweep_summary, parse_config, run_lambda_sweep, run_paired, run_single,
    run_unweighted, ExperimentConfig, Mode, Overrides, RunArtifacts,
};
use c3rl::Error;

/// Train and compare time-series forecasters with and without the C3RL
/// siamese contrastive objective.
#[derive(Parser)]
#[command(name = "c3rl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFlags {
    /// Flat TOML config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV dataset: 'date' column plus one numeric column per channel.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model kind: dlinear, rlinear, itransformer, patchtst.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    lambda_simsia: Option<f64>,
    #[arg(long)]
    lambda_pred: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for results.json, comparison.csv, and plot data.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// One training run (mode baseline or c3rl, from config; default c3rl).
    Run(CommonFlags),
    /// Baseline vs C3RL with shared seed and data.
    Paired(CommonFlags),
    /// λ sweep over the configured grid with λ_pred = 1 − λ_simsia.
    Sweep(CommonFlags),
    /// Tuned weights vs the unweighted (1, 1) setting.
    Unweighted(CommonFlags),
}

fn overrides(f: &CommonFlags) -> Overrides {
    Overrides {
        dataset: f.dataset.clone(),
        model: f.model.clone(),
        horizon: f.horizon,
        lookback: f.lookback,
        lambda_simsia: f.lambda_simsia,
        lambda_pred: f.lambda_pred,
        seed: f.seed,
        out: f.out.clone(),
    }
}

fn emit(runs: &[RunArtifacts], cfg: &ExperimentConfig) -> Result<(), Error> {
    for r in runs {
        println!(
            "{} {} {} h{} seed {}: test mse {:.6}, mae {:.6} (best epoch {})",
            r.result.arm,
            r.result.model,
            r.result.dataset,
            r.result.horizon,
            r.result.seed,
            r.result.test_mse,
            r.result.test_mae,
            r.result.best_epoch
        );
    }
    if let Some(out) = &cfg.out {
        emit_results(runs, out)?;
        println!("artifacts written to {}", out.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    let (flags, forced_mode) = match &cli.command {
        Command::Run(f) => (f, None),
        Command::Paired(f) => (f, Some(Mode::Paired)),
        Command::Sweep(f) => (f, Some(Mode::LambdaSweep)),
        Command::Unweighted(f) => (f, Some(Mode::Unweighted)),
    };
    let mut cfg = parse_config(flags.config.as_deref(), &overrides(flags))?;
    if let Some(m) = forced_mode {
        cfg.mode = m;
    } else if !matches!(cfg.mode, Mode::Baseline | Mode::C3rl) {
        cfg.mode = Mode::C3rl;
    }
    match cfg.mode {
        Mode::Baseline | Mode::C3rl => {
            let run = run_single(&cfg)?;
            emit(&[run], &cfg)
        }
        Mode::Paired => {
            let (base, c3rl) = run_paired(&cfg)?;
            println!(
                "delta mse {:+.6}, delta mae {:+.6}",
                c3rl.result.test_mse - base.result.test_mse,
                c3rl.result.test_mae - base.result.test_mae
            );
            emit(&[base, c3rl], &cfg)
        }
        Mode::LambdaSweep => {
            let grid = cfg.sweep_grid.clone();
            let runs = run_lambda_sweep(&cfg, &grid)?;
            emit(&runs, &cfg)?;
            if let Some(out) = &cfg.out {
                emit_sweep_summary(&runs, out)?;
            }
            Ok(())
        }
        Mode::Unweighted => {
            let (tuned, unweighted) = run_unweighted(&cfg)?;
            emit(&[tuned, unweighted], &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
