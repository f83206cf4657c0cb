use std::path::PathBuf;

use cesmc::ce::Smoothing;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cesmc", version, about = "Rare-event statistical model checking with cross-entropy importance sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Simulation threads; defaults to $CESMC_WORKERS or the core count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Directory for CSV, JSON and manifest output.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crude Monte Carlo estimate.
    Mc(McArgs),
    /// Importance-sampling estimate under a fixed tilt.
    Is(IsArgs),
    /// Cross-entropy optimisation of the tilt, optionally followed by an IS estimate.
    Ce(CeArgs),
    /// Exact probability on the explicit state space.
    Exact(ExactArgs),
    /// Simulate one trace and dump its states as CSV.
    Trace(TraceArgs),
    /// Re-run the experiment described by a manifest.
    Rerun {
        manifest: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model file in the guarded-command format.
    #[arg(long)]
    pub model: PathBuf,
    /// Temporal property, e.g. 'X ((! init) U failure)'.
    #[arg(long)]
    pub property: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = cesmc::simulate::DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of traces; derived from --epsilon/--delta when absent.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct LambdaArgs {
    /// Comma-separated tilt, one entry per command.
    #[arg(long, value_delimiter = ',', conflicts_with = "lambda_from")]
    pub lambda: Option<Vec<f64>>,
    /// JSON result of a `ce` run whose final tilt is used.
    #[arg(long)]
    pub lambda_from: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[arg(long)]
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    Halving,
    Additive,
}

#[derive(Debug, Args)]
pub struct CeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Traces per candidate of the initial search.
    #[arg(long, default_value_t = 1000)]
    pub n0: u64,
    /// Traces per iteration.
    #[arg(long, default_value_t = 1000)]
    pub nj: u64,
    #[arg(long, default_value_t = 20)]
    pub iterations: u64,
    #[arg(long, value_enum, default_value_t = SmoothingKind::Halving)]
    pub smoothing: SmoothingKind,
    /// Fraction of the previous value used by additive smoothing.
    #[arg(long, default_value_t = 0.01)]
    pub smoothing_fraction: f64,
    /// Sum of the tilt after each iteration; defaults to the command count.
    #[arg(long)]
    pub norm_constant: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    pub tol: f64,
    #[arg(long, default_value_t = 3)]
    pub window: u64,
    /// Keep iterating after the convergence test passes.
    #[arg(long)]
    pub all_iterations: bool,
    #[arg(long, default_value_t = 10)]
    pub max_restarts: u64,
    /// Start from this tilt instead of searching.
    #[command(flatten)]
    pub lambda: LambdaArgs,
    /// Traces of the final IS estimate; skipped when absent.
    #[arg(long)]
    pub n_is: Option<u64>,
    /// Add the last iteration's traces to the final estimate.
    #[arg(long)]
    pub reuse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactMethod {
    /// Value iteration.
    Vi,
    /// Preconditioned GMRES.
    Linear,
    /// Both, reporting their difference.
    Both,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub property: String,
    #[arg(long, default_value_t = cesmc::oracle::DEFAULT_STATE_CAP)]
    pub cap: usize,
    #[arg(long, value_enum, default_value_t = ExactMethod::Vi)]
    pub method: ExactMethod,
    #[arg(long, default_value_t = cesmc::oracle::DEFAULT_TOL)]
    pub tol: f64,
    /// Write the chain as `row col prob` lines.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    /// Index of the trace within the estimation stream.
    #[arg(long, default_value_t = 0)]
    pub index: u64,
}

/// Everything needed to reproduce a run, echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub model_path: PathBuf,
    /// Model source, so the manifest stands alone.
    pub model_text: String,
    pub property: String,
    pub seed: u64,
    pub max_steps: usize,
    #[serde(flatten)]
    pub params: ModeParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mc,
    Ce,
    Is,
    Exact,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode_params", rename_all = "snake_case")]
pub enum ModeParams {
    Mc {
        n: u64,
        epsilon: Option<f64>,
        delta: Option<f64>,
    },
    Is {
        lambda: Vec<f64>,
        n_is: u64,
    },
    Ce {
        n0: u64,
        nj: u64,
        max_iterations: u64,
        smoothing: SmoothingKind,
        smoothing_fraction: f64,
        normalisation_constant: Option<f64>,
        convergence_tol: f64,
        convergence_window: u64,
        stop_on_convergence: bool,
        max_restarts: u64,
        initial_lambda: Option<Vec<f64>>,
        n_is: Option<u64>,
        reuse: bool,
    },
    Exact {
        cap: usize,
        method: ExactMethod,
        tol: f64,
        export: Option<PathBuf>,
    },
    Trace {
        lambda: Option<Vec<f64>>,
        index: u64,
    },
}

impl ModeParams {
    pub fn smoothing(kind: SmoothingKind, fraction: f64) -> Smoothing<f64> {
        match kind {
            SmoothingKind::Halving => Smoothing::Halving,
            SmoothingKind::Additive => Smoothing::Additive(fraction),
        }
    }
}
