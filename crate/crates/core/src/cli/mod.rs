//! Command-line front end.
//!
//! Every numeric option resolves in three layers: an explicit flag wins, then a
//! key of the same name in the `--config` file (`key = value`, dashes or
//! underscores), then the built-in default shown in `--help`.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 training, 4 estimation.

mod commands;
mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_ESTIMATION: i32 = 4;

/// Exit code for an error, judged by the kind beneath any stage wrappers.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::Shape(_) => EXIT_USAGE,
        Error::Data(_) | Error::Parse { .. } | Error::NotFound(_) | Error::Io { .. } => EXIT_DATA,
        Error::Training(_) | Error::Model(_) => EXIT_TRAINING,
        Error::Estimation(_) => EXIT_ESTIMATION,
        Error::Stage { .. } => unreachable!("root() strips stage wrappers"),
    }
}

/// ATT estimation with GAN-synthesized counterfactuals.
#[derive(Debug, Parser)]
#[command(name = "ganatt", version)]
pub struct Cli {
    /// Suppress the summary printed to stdout
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a benchmark dataset (data.csv), its spec (spec.txt) and its true ATT (truth.txt)
    GenerateBenchmark(GenerateArgs),
    /// Train a conditional GAN on a dataset and save the model
    Train(TrainCmdArgs),
    /// Draw synthetic rows for one group from a saved model
    Synthesize(SynthesizeArgs),
    /// Run the full estimation pipeline and write a run directory
    Estimate(EstimateArgs),
    /// Compare the GAN estimate with propensity-score and exact matching
    Compare(CompareArgs),
    /// Summarize a run directory written by `estimate` or `compare`
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchmarkKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupArg {
    Control,
    Treated,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: BenchmarkKind,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key = value file supplying any option below
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the data draw (and of W, Σ, μ1 for nonlinear) [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Control rows [default: 50000 linear, 100000 nonlinear]
    #[arg(long)]
    pub n0: Option<usize>,
    /// Treated rows [default: 50000 linear, 100000 nonlinear]
    #[arg(long)]
    pub n1: Option<usize>,
    /// Outcome level (linear) or control amplitude (nonlinear) [default: 0 linear, 5 nonlinear]
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Covariate slope (linear) or treated amplitude (nonlinear) [default: 1.5 linear, 5 nonlinear]
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// Treatment effect: the ATT (linear) or the bump height (nonlinear) [default: 1 linear, 1.5 nonlinear]
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Outcome noise standard deviation [default: 0.1]
    #[arg(long)]
    pub sigma_eps: Option<f64>,
    /// Linear only: control covariate mean [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub mu0: Option<f64>,
    /// Linear only: treated covariate mean [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    pub mu1: Option<f64>,
    /// Linear only: control covariate standard deviation [default: 1]
    #[arg(long)]
    pub sigma_x0: Option<f64>,
    /// Linear only: treated covariate standard deviation [default: 2]
    #[arg(long)]
    pub sigma_x1: Option<f64>,
    /// Nonlinear only: width of the treatment-effect bump [default: 4]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Nonlinear only: Monte-Carlo draws for the true ATT [default: 1000000]
    #[arg(long)]
    pub mc_draws: Option<usize>,
}

/// Column roles of the input CSV.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row
    #[arg(long)]
    pub data: PathBuf,
    /// Outcome column [default: y]
    #[arg(long)]
    pub outcome: Option<String>,
    /// Treatment column holding 0/1 [default: d]
    #[arg(long)]
    pub treatment: Option<String>,
    /// Comma-separated covariate columns [default: every other column]
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Largest missing share of a covariate filled with its mean [default: 0.04]
    #[arg(long)]
    pub impute_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Tanh,
}

/// GAN training options.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Passes over the training rows [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Cap on discriminator updates across all epochs [default: none]
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Rows per minibatch [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Generator noise width [default: 16]
    #[arg(long)]
    pub noise_dim: Option<usize>,
    /// Comma-separated generator hidden widths [default: 128,128]
    #[arg(long, value_delimiter = ',')]
    pub generator_hidden: Option<Vec<usize>>,
    /// Comma-separated discriminator hidden widths [default: 128,128]
    #[arg(long, value_delimiter = ',')]
    pub discriminator_hidden: Option<Vec<usize>>,
    /// Hidden-layer activation [default: relu]
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    /// Generator Adam learning rate [default: 0.0002]
    #[arg(long)]
    pub generator_lr: Option<f64>,
    /// Discriminator Adam learning rate [default: 0.0002]
    #[arg(long)]
    pub discriminator_lr: Option<f64>,
    /// Adam β₁ for both networks [default: 0.5]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam β₂ for both networks [default: 0.9]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Discriminator updates per generator update [default: 1]
    #[arg(long)]
    pub discriminator_steps: Option<usize>,
    /// Independent training runs; the closest in moments is kept [default: 1]
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Epochs between fidelity snapshots, 0 for none [default: 0]
    #[arg(long)]
    pub snapshot_interval: Option<usize>,
    /// Stop once a snapshot's moment distance falls below this [default: none]
    #[arg(long)]
    pub early_stop: Option<f64>,
    /// Columns with at most this many distinct values are one-hot encoded [default: 10]
    #[arg(long)]
    pub discrete_max_levels: Option<usize>,
    /// Decay of the generator weight average, 0 to keep raw weights [default: 0.999]
    #[arg(long)]
    pub generator_averaging: Option<f64>,
    /// Training seed [default: the command's --seed]
    #[arg(long)]
    pub train_seed: Option<u64>,
}

/// Training-set augmentation with Gaussian input noise.
#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Rows per original row, 1 for no augmentation [default: 1]
    #[arg(long)]
    pub augment_factor: Option<usize>,
    /// Noise scale, relative to each column's std unless --augment-absolute [default: 0.1]
    #[arg(long)]
    pub augment_noise: Option<f64>,
    /// Read --augment-noise as an absolute standard deviation
    #[arg(long)]
    pub augment_absolute: bool,
    /// Augment control rows too, not only treated rows
    #[arg(long)]
    pub augment_all: bool,
}

/// Hypercube grid options.
#[derive(Debug, Args)]
pub struct GridArgs {
    /// Bins per dimension: `auto`, one count, or a comma-separated list [default: auto]
    #[arg(long)]
    pub bins: Option<String>,
    /// Widening of the pooled bounds, as a share of the range per side [default: 0.01]
    #[arg(long)]
    pub bounds_expand: Option<f64>,
    /// Rows each group needs in a cube before it is used [default: 5]
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Synthetic rows per group [default: 200000]
    #[arg(long)]
    pub synth_n: Option<usize>,
    /// Histogram bins of the per-column KL divergence [default: 100]
    #[arg(long)]
    pub kl_bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainCmdArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-epoch loss curve to this CSV
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Flat key = value file supplying any option
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of training and augmentation [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub augment: AugmentArgs,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Model file written by `train`
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub group: GroupArg,
    /// Rows to draw
    #[arg(long)]
    pub n: usize,
    /// Sampling seed [default: 0]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory for the report, model, synthetic rows and CATE surface
    #[arg(long)]
    pub out: PathBuf,
    /// Use this saved model instead of training one
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Flat key = value file supplying any option
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of synthesis, and of training unless --train-seed is given [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub augment: AugmentArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,
    /// Controls per treated row in nearest-neighbour matching [default: 3]
    #[arg(long)]
    pub nn_k: Option<usize>,
    /// Largest propensity-score distance of a nearest-neighbour match [default: none]
    #[arg(long)]
    pub caliper: Option<f64>,
    /// Epanechnikov bandwidth of kernel matching [default: Silverman's rule]
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Coarsening bins per covariate for exact matching [default: Sturges' rule]
    #[arg(long)]
    pub cem_bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory written by `estimate` or `compare`
    #[arg(long)]
    pub run: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(&cli) {
        Ok(text) => {
            if !cli.quiet {
                print!("{text}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
