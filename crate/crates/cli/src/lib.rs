//! The `ycd` command: dataset preparation, training, evaluation, inspection, serving, and
//! benchmarking in one binary.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors (bad flags, missing
//! inputs). Every command first prints a reproducibility line with its seed and a SHA-256
//! digest of its fully resolved configuration.

mod commands;
mod stats;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use commands::bench_forward;
pub use stats::{LatencyStats, WARMUP_ITERATIONS};

/// Raised for invalid invocations; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Process exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "ycd", version, about = "Banknote denomination recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// List the classes and images under a dataset root.
    DatasetScan(ScanArgs),
    /// Assign every image to the train or test split.
    DatasetSplit(SplitCmdArgs),
    /// Generate a synthetic banknote dataset.
    Synth(SynthArgs),
    /// Train the classification head on a frozen backbone.
    Train(TrainArgs),
    /// Per-class accuracy of a trained bundle.
    Eval(EvalArgs),
    /// Classify image files.
    Classify(ClassifyArgs),
    /// Parameter and MAC counts, layer by layer.
    Info(InfoArgs),
    /// Run the HTTP classification service.
    Serve(ServeArgs),
    /// Forward-pass latency statistics.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::DatasetScan(_) => "dataset-scan",
            Command::DatasetSplit(_) => "dataset-split",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Classify(_) => "classify",
            Command::Info(_) => "info",
            Command::Serve(_) => "serve",
            Command::Bench(_) => "bench",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::DatasetSplit(a) => Some(a.seed),
            Command::Synth(a) => Some(a.seed),
            Command::Train(a) => Some(a.seed),
            Command::Eval(a) => Some(a.seed),
            Command::Bench(a) => Some(a.seed),
            _ => None,
        }
    }
}

/// Where images come from: a dataset root (`<root>/<label>/*.png|jpg`) or a saved manifest.
#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Dataset root with one sub-directory per class.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Manifest written by `dataset-scan` or `dataset-split`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Test-split size per class; without either flag, 55 of 400 or 15 % otherwise.
#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct SplitArgs {
    /// Fixed number of test images per class.
    #[arg(long, conflicts_with = "test_fraction")]
    pub test_count: Option<usize>,
    /// Fraction of each class held out for testing, in (0, 1).
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScanArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Write the manifest as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitCmdArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory; one sub-directory per class is created.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 400)]
    pub per_class: usize,
    /// Side length of the square images.
    #[arg(long, default_value_t = 224)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct ArchArgs {
    /// Width multiplier α ∈ (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Resolution multiplier ρ ∈ (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Base input resolution before ρ is applied.
    #[arg(long, default_value_t = ycd_core::model::DEFAULT_RESOLUTION)]
    pub resolution: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, alias = "batch", default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    /// Seeds the backbone weights, the split, and the epoch shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on raw embeddings instead of standardized ones.
    #[arg(long)]
    pub no_standardize: bool,
    /// Model bundle path.
    #[arg(long, default_value = "model.ycdm")]
    pub out: PathBuf,
    /// Metrics CSV path; defaults to the bundle path with a `.csv` extension.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, env = "YCD_MODEL")]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Split seed; must match the one used for training to evaluate the same test set.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub on: SplitChoice,
    /// Write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[arg(long, env = "YCD_MODEL")]
    pub bundle: PathBuf,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct InfoArgs {
    /// Inspect a saved bundle instead of a freshly built architecture.
    #[arg(long, conflicts_with_all = ["alpha", "rho", "resolution", "classes"])]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Classes in the dense head.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Also report cost ratios against this width multiplier.
    #[arg(long)]
    pub compare_alpha: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, env = "YCD_ADDR", default_value = ycd_serve::DEFAULT_ADDR)]
    pub addr: std::net::SocketAddr,
    #[arg(long, env = "YCD_MODEL")]
    pub model: Option<PathBuf>,
    /// Predictions per response; all classes when omitted.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, default_value_t = ycd_serve::DEFAULT_MAX_BODY_BYTES)]
    pub max_body_bytes: usize,
    /// Origin allowed to call the API from a browser; repeatable. `*` allows any.
    #[arg(long = "allow-origin", default_value = "*")]
    pub allow_origins: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Benchmark a saved bundle instead of a freshly initialized network.
    #[arg(long, conflicts_with_all = ["alpha", "rho", "resolution"])]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Timed forward passes, after the warm-up.
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    /// Seeds the backbone (without `--bundle`) and the input image.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// `repro: ycd <command> seed=<seed> config_sha256=<hex> config=<json>`
pub fn repro_line(cli: &Cli) -> String {
    let config = serde_json::to_string(cli).expect("arguments serialize");
    let digest = hex::encode(Sha256::digest(config.as_bytes()));
    let seed = cli
        .command
        .seed()
        .map(|s| s.to_string())
        .unwrap_or_else(|| "none".into());
    format!(
        "repro: ycd {} seed={seed} config_sha256={digest} config={config}",
        cli.command.name()
    )
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    println!("{}", repro_line(&cli));
    match cli.command {
        Command::DatasetScan(a) => commands::dataset_scan(a),
        Command::DatasetSplit(a) => commands::dataset_split(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Classify(a) => commands::classify(a),
        Command::Info(a) => commands::info(a),
        Command::Serve(a) => commands::serve(a),
        Command::Bench(a) => commands::bench(a),
    }
}
