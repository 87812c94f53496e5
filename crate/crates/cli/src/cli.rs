use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "gspn",
    version,
    about = "Train and query graph-induced sum-product networks"
)]
pub struct Cli {
    /// JSON config holding model settings and default paths.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-graph parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Where to write the metrics JSON (stdout when omitted).
    #[arg(long, global = true)]
    pub metrics: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a GSPN by maximizing the pseudo log-likelihood.
    TrainUnsup(TrainArgs),
    /// Fit a GSPN with a graph-level readout on labeled graphs.
    TrainSup(TrainSupArgs),
    /// Mean per-vertex pseudo log-likelihood of each graph.
    EvalPll(EvalArgs),
    /// Negative log-likelihood of masked entries at their held-out values.
    EvalMissingNll(EvalArgs),
    /// Fill masked entries with conditional means.
    Impute(OutputArgs),
    /// Per-vertex embeddings, one CSV row per vertex.
    Embed(OutputArgs),
    /// Change of every vertex's pseudo log-likelihood after one edit.
    QueryPerturb(PerturbArgs),
    /// Class predictions of a supervised model.
    Classify(ClassifyArgs),
    /// Structure-free density baselines.
    Baseline(BaselineArgs),
    /// Hide attribute entries with Gamma-distributed per-vertex rates.
    Mask(MaskArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset JSON.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelOverrides {
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub states: Option<usize>,
    /// Combine the lower emissions at the top height.
    #[arg(long)]
    pub shortcut: Option<bool>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch training history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Joint,
    Frozen,
}

#[derive(Debug, Args)]
pub struct TrainSupArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Mixture states of the graph-level sum unit.
    #[arg(long)]
    pub graph_states: Option<usize>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Start from the GSPN of this checkpoint.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    /// Index of the graph in the dataset.
    #[arg(long, default_value_t = 0)]
    pub graph: usize,
    #[arg(long)]
    pub vertex: usize,
    #[arg(long = "attr")]
    pub attribute: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub value: f64,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Gaussian,
    Gmm,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(value_enum)]
    pub kind: BaselineKind,
    /// Training dataset.
    #[command(flatten)]
    pub data: DataArgs,
    /// Dataset with masked entries to score; the training data when omitted.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Fitted parameters JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mixture components (gmm only).
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Gamma shape of the per-vertex masking rate.
    #[arg(long, default_value_t = 1.5)]
    pub concentration: f64,
    /// Gamma rate of the per-vertex masking rate.
    #[arg(long, default_value_t = 0.5)]
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Community graphs labeled by their majority community.
    Communities,
    /// Edgeless graphs with rows from a fixed Gaussian mixture.
    Mixture,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub graphs: usize,
    /// Vertices (rows) per graph.
    #[arg(long, default_value_t = 20)]
    pub vertices: usize,
    /// Communities (or mixture components).
    #[arg(long, default_value_t = 5)]
    pub communities: usize,
    /// Standard deviation of the attribute noise.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
}
