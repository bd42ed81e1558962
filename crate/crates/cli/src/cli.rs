//! Argument definitions for the `wmlff` binary.
//!
//! Data paths that do not exist as given are retried against the directory
//! in the `WMLFF_DATA_DIR` environment variable, so recipes can refer to a
//! shared dataset directory without hardcoding it.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wmlff_core::features::stats::BiasStdRatio;
use wmlff_core::model::{FeatureTap, HeadKind, OutputKind, TowerLayout};
use wmlff_core::training::{LossKind, OptimizerKind, StopMetric};

#[derive(Parser)]
#[command(
    name = "wmlff",
    version,
    about = "Weighted multi-level feature factorization for tabular click, install, and rating prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Infer a feature schema from a training file and report it
    FitSchema(FitSchemaArgs),
    /// Train a model (or k-fold ensemble) and save it as a container
    Train(TrainArgs),
    /// Score rows with a saved model
    Predict(PredictArgs),
    /// Evaluate a saved model on labeled rows
    Evaluate(EvaluateArgs),
    /// Train and evaluate every built-in model variant
    Ablate(AblateArgs),
    /// Generate synthetic data from a planted model
    Generate(GenerateArgs),
    /// Convert MovieLens 100k rating splits into the expected layout
    AdaptMovielens(AdaptArgs),
    /// Keep a seeded random fraction of a delimited file's rows
    Subsample(SubsampleArgs),
}

#[derive(Args)]
pub struct FitSchemaArgs {
    /// Training data (CSV or TSV with a header)
    #[arg(long)]
    pub data: PathBuf,
    /// Schema config TOML with declared column roles
    #[arg(long)]
    pub schema_config: Option<PathBuf>,
    /// Write the fitted schema as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training data (CSV or TSV with a header)
    #[arg(long)]
    pub data: PathBuf,
    /// Schema config TOML with declared column roles
    #[arg(long, conflicts_with = "pipeline")]
    pub schema_config: Option<PathBuf>,
    /// Fitted pipeline JSON from fit-schema, used instead of refitting
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    /// Run config TOML with [model] and [train] tables; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in variant preset, applied beneath the config file and flags
    #[arg(long)]
    pub variant: Option<String>,
    /// Output model container path
    #[arg(long)]
    pub out: PathBuf,
    /// Train a k-member ensemble by round-robin fold dealing
    #[arg(long)]
    pub kfold: Option<usize>,
    /// Suppress per-epoch progress lines
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Default)]
pub struct ModelFlags {
    /// Embedding and tower width
    #[arg(long)]
    pub dim: Option<usize>,
    /// Dense blocks per tower
    #[arg(long)]
    pub depth: Option<usize>,
    /// Train-time multiplicative noise standard deviation
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Negative-side slope of the activation
    #[arg(long)]
    pub activation_slope: Option<f64>,
    /// Similarity at each level: dot, cosine
    #[arg(long, value_parser = parse_head)]
    pub head: Option<HeadKind>,
    /// Tower layout: dual, independent, single
    #[arg(long, value_parser = parse_towers)]
    pub towers: Option<TowerLayout>,
    /// Head output: sigmoid, linear
    #[arg(long, value_parser = parse_output)]
    pub output: Option<OutputKind>,
    /// Level features: post_activation, pre_activation
    #[arg(long, value_parser = parse_tap)]
    pub tap: Option<FeatureTap>,
}

#[derive(Args, Default)]
pub struct TrainFlags {
    /// Loss: joint_bce, bce, mse (defaults follow the label columns)
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    /// Optimizer: adam, adamw, radam
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Minibatch size
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hold out this fraction of rows for per-epoch validation
    #[arg(long)]
    pub validation_split: Option<f64>,
    /// Stop when validation stalls and restore the best parameters
    #[arg(long)]
    pub early_stopping: bool,
    /// Epochs without improvement tolerated before stopping (implies
    /// --early-stopping)
    #[arg(long)]
    pub patience: Option<usize>,
    /// What early stopping watches: loss, auc, rmse
    #[arg(long, value_parser = parse_stop_metric)]
    pub stop_metric: Option<StopMetric>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Model container
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to score; label columns may be absent
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV of per-head predictions
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Model container
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub model: Option<PathBuf>,
    /// Score an existing predictions CSV instead of a model
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Labeled rows to evaluate on
    #[arg(long)]
    pub data: PathBuf,
    /// Schema config naming the label columns (predictions mode only)
    #[arg(long)]
    pub schema_config: Option<PathBuf>,
    /// Also write the key=value block to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a one-row CSV of the metrics
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Training data
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out data every variant is scored on
    #[arg(long)]
    pub test: PathBuf,
    /// Schema config TOML with declared column roles
    #[arg(long)]
    pub schema_config: Option<PathBuf>,
    /// Output CSV, one row per variant
    #[arg(long)]
    pub out: PathBuf,
    /// Override the epoch count for every variant
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Override the minibatch size for every variant
    #[arg(long)]
    pub batch: Option<usize>,
    /// Suppress per-epoch progress lines
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Training rows to generate
    #[arg(long)]
    pub rows: usize,
    /// Additional held-out rows from the same planted model
    #[arg(long, default_value_t = 0)]
    pub test_rows: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Directory for planted.csv, probs.csv, and schema.toml
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Cardinalities of the categorical columns, comma separated
    #[arg(long, value_delimiter = ',')]
    pub cards: Option<Vec<usize>>,
    /// Number of numeric columns
    #[arg(long)]
    pub numerics: Option<usize>,
    /// Teacher embedding and tower width
    #[arg(long)]
    pub dim: Option<usize>,
    /// Teacher tower depth
    #[arg(long)]
    pub depth: Option<usize>,
    /// Planted output multiplier
    #[arg(long)]
    pub scale_boost: Option<f64>,
}

#[derive(Args)]
pub struct AdaptArgs {
    /// Directory holding the MovieLens 100k split files
    #[arg(long)]
    pub raw: PathBuf,
    /// Directory for train.csv, test.csv, and schema.toml
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Split stem, e.g. u1 reads u1.base and u1.test
    #[arg(long, default_value = "u1")]
    pub split: String,
    /// Add per-user and per-item rating statistics derived from the
    /// training split
    #[arg(long)]
    pub bias_stats: bool,
    /// Ratio feature form: mu_over_sigma, sigma_over_mu
    #[arg(long, value_parser = parse_ratio, default_value = "mu_over_sigma")]
    pub bias_std_ratio: BiasStdRatio,
}

#[derive(Args)]
pub struct SubsampleArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Probability of keeping each row
    #[arg(long)]
    pub fraction: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Treat the first line as data instead of copying it through
    #[arg(long)]
    pub no_header: bool,
}

type ParseResult<T> = std::result::Result<T, String>;

fn parse_head(s: &str) -> ParseResult<HeadKind> {
    match s {
        "dot" => Ok(HeadKind::Dot),
        "cosine" => Ok(HeadKind::Cosine),
        _ => Err(format!("unknown head {s:?} (dot, cosine)")),
    }
}

fn parse_towers(s: &str) -> ParseResult<TowerLayout> {
    match s {
        "dual" | "dual_shared" => Ok(TowerLayout::DualShared),
        "independent" | "dual_independent" => Ok(TowerLayout::DualIndependent),
        "single" | "single_task" => Ok(TowerLayout::SingleTask),
        _ => Err(format!(
            "unknown layout {s:?} (dual, independent, single)"
        )),
    }
}

fn parse_output(s: &str) -> ParseResult<OutputKind> {
    match s {
        "sigmoid" => Ok(OutputKind::Sigmoid),
        "linear" => Ok(OutputKind::Linear),
        _ => Err(format!("unknown output {s:?} (sigmoid, linear)")),
    }
}

fn parse_tap(s: &str) -> ParseResult<FeatureTap> {
    match s {
        "post_activation" => Ok(FeatureTap::PostActivation),
        "pre_activation" => Ok(FeatureTap::PreActivation),
        _ => Err(format!(
            "unknown tap {s:?} (post_activation, pre_activation)"
        )),
    }
}

fn parse_loss(s: &str) -> ParseResult<LossKind> {
    match s {
        "joint_bce" => Ok(LossKind::JointBce),
        "bce" => Ok(LossKind::Bce),
        "mse" => Ok(LossKind::Mse),
        _ => Err(format!("unknown loss {s:?} (joint_bce, bce, mse)")),
    }
}

fn parse_optimizer(s: &str) -> ParseResult<OptimizerKind> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "adamw" => Ok(OptimizerKind::AdamW),
        "radam" => Ok(OptimizerKind::RAdam),
        _ => Err(format!("unknown optimizer {s:?} (adam, adamw, radam)")),
    }
}

fn parse_stop_metric(s: &str) -> ParseResult<StopMetric> {
    match s {
        "loss" => Ok(StopMetric::Loss),
        "auc" => Ok(StopMetric::Auc),
        "rmse" => Ok(StopMetric::Rmse),
        _ => Err(format!("unknown stop metric {s:?} (loss, auc, rmse)")),
    }
}

fn parse_ratio(s: &str) -> ParseResult<BiasStdRatio> {
    match s {
        "mu_over_sigma" => Ok(BiasStdRatio::MuOverSigma),
        "sigma_over_mu" => Ok(BiasStdRatio::SigmaOverMu),
        _ => Err(format!(
            "unknown ratio {s:?} (mu_over_sigma, sigma_over_mu)"
        )),
    }
}
