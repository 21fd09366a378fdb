use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "storyclass", version, about = "Classify and explain harassment stories")]
pub struct Cli {
    /// Model configuration overrides: a JSON file, or an inline JSON object.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<String>,

    /// Seed for splitting, shuffling, dropout and the analyses.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory, created if absent.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Only log warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and write a checkpoint, its history and a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Fill incident-report checkboxes for free-text descriptions.
    Report(ReportArgs),
    /// Explain one prediction with LIME or gradient saliency.
    Explain(ExplainArgs),
    /// Cluster stories by their activations.
    Cluster(ClusterArgs),
    /// Project the most frequent words' embeddings to 2-D and list seed-word neighbours.
    Tsne(TsneArgs),
    /// Pick the multi-label decision threshold that maximizes dev Hamming score.
    TuneThreshold(TuneArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Story CSV, or a directory with train.csv, dev.csv and test.csv.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,

    /// Directory with train.txt, dev.txt and test.txt story indices.
    #[arg(long, value_name = "DIR")]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Story CSV, or a directory with train.csv, dev.csv and test.csv.
    #[arg(long, value_name = "PATH", required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,

    /// Directory with train.txt, dev.txt and test.txt story indices.
    #[arg(long, value_name = "DIR")]
    pub splits: Option<PathBuf>,

    /// Generate this many keyword-labelled stories instead of reading --data.
    #[arg(long, value_name = "N", conflicts_with = "data")]
    pub synthetic: Option<usize>,

    #[arg(long, default_value = "cnn-rnn")]
    pub arch: String,

    /// `multi`, `single` (with --category) or `single:<category>`.
    #[arg(long, default_value = "multi")]
    pub task: String,

    #[arg(long)]
    pub category: Option<String>,

    /// Start from the reduced widths (embedding 100, hidden ≤ 100).
    #[arg(long)]
    pub reduced: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value = "dev")]
    pub split: String,

    /// Multi-label decision threshold; defaults to the checkpoint's.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// A description to classify; repeatable.
    #[arg(long, value_name = "TEXT", required_unless_present = "input")]
    pub text: Vec<String>,

    /// A CSV with a `description` (and optional `location`) column, or plain text with one
    /// description per line.
    #[arg(long, value_name = "FILE", conflicts_with = "text")]
    pub input: Option<PathBuf>,

    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Lime,
    Saliency,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    #[arg(long, value_name = "TEXT")]
    pub text: String,

    #[arg(long, value_enum)]
    pub method: Method,

    /// Output to explain: a class index, or a category name for multi-label models.
    /// Defaults to the predicted class (single) or the strongest category (multi).
    #[arg(long)]
    pub label: Option<String>,

    /// LIME perturbation count.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,

    /// LIME surrogate feature count.
    #[arg(long, default_value_t = 10)]
    pub features: usize,

    #[arg(long, default_value_t = 0.25)]
    pub kernel_width: f64,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// `all`, `train`, `dev` or `test`.
    #[arg(long, default_value = "all")]
    pub split: String,

    /// Number of clusters; chosen by silhouette over 2..=12 when absent.
    #[arg(long)]
    pub k: Option<usize>,

    #[arg(long, default_value = "fc-input")]
    pub layer: String,

    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Number of most frequent vocabulary words to project.
    #[arg(long, default_value_t = 2000)]
    pub top: usize,

    /// Comma-separated seed words.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<String>,

    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,

    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,

    #[arg(long, default_value_t = 10)]
    pub neighbors: usize,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Comma-separated thresholds in (0, 1); defaults to 0.30, 0.35, …, 0.70.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
}
