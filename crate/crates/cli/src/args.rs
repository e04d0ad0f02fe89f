use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Feature-grounded embeddings and module-swap experiments.
#[derive(Debug, Parser)]
#[command(name = "groundkit", version, arg_required_else_help = true)]
pub struct Cli {
    /// Global seed; overrides GROUNDKIT_SEED and any seed in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Execution policy for data-parallel work. Results are identical either way.
    #[arg(long, global = true, value_enum, default_value_t = ExecArg::Parallel)]
    pub exec: ExecArg,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecArg {
    Serial,
    Parallel,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic vocabulary, feature file and datasets.
    Synth(SynthArgs),
    /// Train a grounded embedding.
    Ground(GroundArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Evaluate a classifier checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run a swap experiment plan.
    Swap(SwapArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print statistics about operators or embedding files.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON synthetic spec; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of content tokens.
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub coherence: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Also write train_coarse.csv and test_coarse.csv with labels folded into this many classes.
    #[arg(long)]
    pub coarse: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Output embedding file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    /// Per-epoch metrics CSV; defaults to `<out>.metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Grounded embedding used to initialize the embedding block.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Feature file the embedding was grounded on; a mismatch is reported as a warning.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to the config value, else one more than the largest training label.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub freeze_embedding: bool,
    /// Per-epoch metrics CSV; defaults to `<out>.metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct SwapArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Directory for report.json, report.csv and plot.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradTarget {
    Grounding,
    Classifier,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = GradTarget::Grounding)]
    pub target: GradTarget,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(subcommand)]
    pub what: InspectWhat,
}

#[derive(Debug, Subcommand)]
pub enum InspectWhat {
    /// Saturation operators for a vocabulary size.
    Operator {
        #[arg(long)]
        vocab_size: usize,
        /// Single token index; all tokens are summarized when absent.
        #[arg(long)]
        token: Option<usize>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 39)]
        feature_dim: usize,
    },
    /// Header and row-norm statistics of an embedding file.
    Embedding {
        path: PathBuf,
        /// Feature file to compare against the stored fingerprint.
        #[arg(long)]
        features: Option<PathBuf>,
    },
}
