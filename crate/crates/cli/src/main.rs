//! `grokscope`: train grokking runs, sweep hyperparameters, analyze
//! experiment directories, and render static SVG figures.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! runtime failures.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grokscope::landscape::GridSpec;

use commands::{Analysis, AnalyzeArgs, IdSyntheticArgs, PlotKind, SweepArgs, TestFnArgs, TestFunction};

/// Failure classes that map to distinct exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn into_inner(self) -> anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

#[derive(Parser)]
#[command(name = "grokscope", version, about = "Grokking laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run into an experiment directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite artifacts in a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Override `task.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `task.r`.
        #[arg(long)]
        r: Option<f64>,
    },
    /// Train a learning-rate by weight-decay (by fraction, by seed) grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Comma-separated learning rates; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        lrs: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        wds: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        rs: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run one analysis over an experiment directory.
    Analyze {
        #[arg(value_enum)]
        which: Analysis,
        /// Experiment directory (for fit-t4, a directory of run directories).
        #[arg(long)]
        dir: PathBuf,
        /// Spectral window as `start:end`.
        #[arg(long, value_parser = parse_window)]
        window: Option<(usize, usize)>,
        /// Spectral high-pass cutoff in cycles per step.
        #[arg(long)]
        cutoff: Option<f64>,
        /// 1D slice grid as `lo:hi:n`.
        #[arg(long)]
        alphas: Option<GridSpec>,
    },
    /// Render SVG figures from analysis outputs into `<dir>/plots`.
    Plot {
        #[arg(value_enum)]
        kind: PlotKind,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Race the optimizers on an analytic test function.
    Testfn {
        #[arg(long, value_enum, default_value = "rosenbrock-chained")]
        function: TestFunction,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Optimize `ln(1 + f)` instead of `f`.
        #[arg(long)]
        log: bool,
        #[arg(long, default_value_t = grokscope::testfn::DEFAULT_RACE_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = grokscope::testfn::DEFAULT_REACH_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Estimate intrinsic dimension on a battery of synthetic manifolds.
    IdSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        ambient: usize,
        #[arg(long, default_value_t = 8)]
        max_dim: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected start:end, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("bad window start: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("bad window end: {e}"))?;
    Ok((a, b))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            config,
            out,
            force,
            seed,
            r,
        } => commands::cmd_train(&config, &out, force, seed, r),
        Command::Sweep {
            config,
            out,
            force,
            workers,
            lrs,
            wds,
            rs,
            seeds,
        } => commands::cmd_sweep(
            &config,
            &out,
            force,
            SweepArgs {
                lrs,
                wds,
                rs,
                seeds,
                workers,
            },
        ),
        Command::Analyze {
            which,
            dir,
            window,
            cutoff,
            alphas,
        } => commands::cmd_analyze(&dir, which, &AnalyzeArgs { window, cutoff, alphas }),
        Command::Plot { kind, dir } => commands::cmd_plot(&dir, kind),
        Command::Testfn {
            function,
            dim,
            log,
            steps,
            threshold,
            out,
            force,
        } => commands::cmd_testfn(
            &out,
            force,
            TestFnArgs {
                function,
                dim,
                log,
                steps,
                threshold,
            },
        ),
        Command::IdSynthetic {
            out,
            force,
            n,
            ambient,
            max_dim,
            k,
            seed,
        } => commands::cmd_id_synthetic(
            &out,
            force,
            IdSyntheticArgs {
                n,
                ambient,
                max_dim,
                seed,
                k,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
