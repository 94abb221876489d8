use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sgmm", version, about = "Spatial Gaussian mixture fitting and evaluation")]
pub struct Cli {
    /// Worker threads for parallel loops. Results do not depend on it.
    #[arg(long, global = true, env = "SGMM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a labelled dataset and write its scenario sidecar.
    Simulate(SimulateArgs),
    /// Fit a model and write it as JSON.
    Fit(FitArgs),
    /// Posterior labels and probabilities for a dataset.
    Predict(PredictArgs),
    /// Score predictions against oracle labels and, optionally, the scenario.
    Evaluate(EvaluateArgs),
    /// Mixing or posterior values on a regular spatial grid.
    Heatmap(HeatmapArgs),
    /// Replicate grid for the simulation studies.
    Repro(ReproArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    #[value(name = "1")]
    One,
    Sag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Marginal,
    Joint,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Epanechnikov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Kmeans,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Quantity {
    Mixing,
    Posterior,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long)]
    pub n: usize,
    /// Number of classes (sag only).
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Global probability of class 1 (study 1 only).
    #[arg(long)]
    pub pi1: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the output path with extension `.scenario.json`.
    #[arg(long)]
    pub scenario_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = StageArg::Joint)]
    pub stage: StageArg,
    /// Bandwidth is c · N^(-1/3) unless --bandwidth is given.
    #[arg(long, default_value_t = 2.5)]
    pub bandwidth_c: f64,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel: KernelArg,
    #[arg(long, value_enum, default_value_t = InitArg::Marginal)]
    pub init: InitArg,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Relative objective change that ends the full stage's alternation.
    #[arg(long, default_value_t = 1e-6)]
    pub outer_tol: f64,
    /// Outer rounds of the full stage.
    #[arg(long, default_value_t = 20)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep each training row in its own kernel neighbourhood.
    #[arg(long)]
    pub include_self: bool,
    /// Record wall-clock times in the model file.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the training mixing field as CSV.
    #[arg(long)]
    pub field_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset carrying the oracle labels in column y.
    #[arg(long)]
    pub truth_data: PathBuf,
    /// Scenario sidecar; enables parameter MSE and mixing MISE.
    #[arg(long, requires = "model")]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub grid_res: usize,
    #[arg(long, value_enum, default_value_t = Quantity::Mixing)]
    pub quantity: Quantity,
    /// Required for the posterior quantity; sets the bounding box otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Explicit box `lo1,hi1,lo2,hi2` instead of the padded data box.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bounds: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a binary greyscale raster.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    /// One or more sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    /// Number of classes (sag only).
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub base_seed: u64,
    #[arg(long, default_value_t = 2.5)]
    pub bandwidth_c: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel: KernelArg,
    /// Also run the fully iterated estimator with this many rounds
    /// (study 1 only).
    #[arg(long)]
    pub full_max_outer: Option<usize>,
    /// Skip out-of-sample MISE (study 1 only).
    #[arg(long)]
    pub no_oos: bool,
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-method means and standard errors.
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
}
