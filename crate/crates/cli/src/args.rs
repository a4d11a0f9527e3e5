use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use topodesc_core::autodiff::DerivativeRule;
use topodesc_core::config::Precision;
use topodesc_core::loss::{LambdaMode, TopologyMode};

#[derive(Debug, Parser)]
#[command(
    name = "topodesc",
    version,
    about = "Descriptor learning with neighborhood-topology regularization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic matched-pair dataset.
    Generate(GenerateArgs),
    /// Train an embedding network on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split of a dataset.
    Eval(EvalArgs),
    /// Print neighbor lists, weights and distances for one batch.
    Inspect(InspectArgs),
    /// Compare analytic and finite-difference gradients on a tiny problem.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, env = "TOPODESC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub scenes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.3)]
    pub distortion: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory receiving the checkpoint, log and effective config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value = "desk", value_parser = ["desk", "full"])]
    pub preset: String,
    /// Flat `key = value` file applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `dynamic` or `fixed:<v>`.
    #[arg(long)]
    pub lambda_mode: Option<LambdaMode>,
    /// `through-weights`, `detached` or `off`.
    #[arg(long)]
    pub topology: Option<TopologyMode>,
    /// Worker threads; 1 is the reproducible mode, 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, env = "TOPODESC_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Non-matching verification pairs per matching pair.
    #[arg(long, default_value_t = 1)]
    pub negatives: usize,
    #[arg(long, env = "TOPODESC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Write the metrics as a CSV row with header.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = topodesc_core::topology::DEFAULT_LLE_EPS)]
    pub lle_eps: f64,
    #[arg(long, env = "TOPODESC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Also write one CSV row per index.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, env = "TOPODESC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "through-weights")]
    pub mode: TopologyMode,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Scale the adjoint of one derivative rule (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: Option<DerivativeRule>,
}
