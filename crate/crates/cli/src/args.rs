use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "rsdyn", version, about = "Residual-stream dynamics analysis")]
pub struct Cli {
    /// Key/value file whose entries are applied before the command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a corpus, run the toy model and write an RSD activation file.
    Generate(GenerateArgs),
    /// Compute statistics, mutual information, rotations or PCA from an RSD file.
    Analyze(AnalyzeArgs),
    /// Train the compressing autoencoder and export its trajectories.
    Cae(CaeArgs),
    /// Run the PCA teleportation experiment on a toy-model checkpoint.
    Teleport(TeleportArgs),
    /// Describe an RSD file or parameter checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct GenerateArgs {
    /// Newline-delimited text corpus.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub corpus: Option<PathBuf>,
    /// Use N lines of the built-in synthetic corpus instead of a file.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Output RSD path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub l_min: usize,
    #[arg(long, default_value_t = 500)]
    pub l_max: usize,
    /// Keep at most this many sequences after filtering.
    #[arg(long)]
    pub max_sequences: Option<usize>,
    /// Permute every token after BOS before capture.
    #[arg(long, num_args = 0..=1, require_equals = true, default_value_t = false,
          default_missing_value = "true", action = ArgAction::Set)]
    pub shuffled: bool,
    /// Start from this checkpoint instead of a freshly initialized model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Write the (possibly trained) model checkpoint here.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub d_mlp: usize,
    #[arg(long, default_value_t = 512)]
    pub max_seq: usize,
    /// Language-model training steps before capture.
    #[arg(long, default_value_t = 0)]
    pub train_steps: usize,
    #[arg(long, default_value_t = 8)]
    pub train_batch: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub train_lr: f64,
    #[arg(long, default_value_t = 128)]
    pub train_max_tokens: usize,
    #[arg(long, env = "RSDYN_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Stats,
    Mi,
    Phase,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PairModeArg {
    Consecutive,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NullModeArg {
    Pairs,
    Recompute,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub rsd: PathBuf,
    #[arg(long, value_enum)]
    pub which: Which,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram bins over [0, 1].
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = PairModeArg::Consecutive)]
    pub pair_mode: PairModeArg,
    /// KDE grid points per axis.
    #[arg(long, default_value_t = 64)]
    pub grid_size: usize,
    /// Restrict MI and rotations to these units (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub units: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1000)]
    pub n_shuffle: usize,
    #[arg(long, value_enum, default_value_t = NullModeArg::Pairs)]
    pub null_mode: NullModeArg,
    /// Use one sample's series instead of the batch mean for phase portraits.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Components for the per-sublayer PCA explained variance (capped at D).
    #[arg(long, default_value_t = 100)]
    pub n_components: usize,
    #[arg(long, env = "RSDYN_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct CaeArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub bottleneck: usize,
    /// Layers per stack, input and bottleneck included.
    #[arg(long, default_value_t = 10)]
    pub k_layers: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    #[arg(long, env = "RSDYN_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MseSpaceArg {
    Pca2,
    Full,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TeleportArgs {
    /// Toy-model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// RSD file the PCA is fitted on.
    #[arg(long)]
    pub pca_rsd: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Prompt text (default: the control prompt).
    #[arg(long)]
    pub prompt: Option<String>,
    /// Injection layers, comma separated (default: every layer).
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Grid points per PC axis.
    #[arg(long, default_value_t = 10)]
    pub grid_n: usize,
    /// PC1 range as MIN:MAX (default: projected span widened 10% per side).
    #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
    pub range_x: Option<(f64, f64)>,
    /// PC2 range as MIN:MAX.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_range)]
    pub range_y: Option<(f64, f64)>,
    #[arg(long, value_enum, default_value_t = MseSpaceArg::Pca2)]
    pub mse_space: MseSpaceArg,
    #[arg(long, env = "RSDYN_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct InspectArgs {
    /// RSD file or parameter checkpoint.
    #[arg(long)]
    pub path: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((lo, hi))
}
