use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "honestcalib",
    version,
    about = "Calibration metrics, triplet mining and temperature training for QA prediction logs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a prediction log (H-score, ECI, accuracy, macro-F1, IoU, abstention).
    Metrics(MetricsArgs),
    /// Emit contrastive triplets as JSONL.
    Mine(MineArgs),
    /// Train the projection head and temperature scaler.
    Train(TrainArgs),
    /// Answer or abstain for every record.
    Infer(InferArgs),
    /// Write a synthetic prediction log.
    Synth(SynthArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Input, output and config file shared by the log-reading subcommands.
#[derive(Debug, Args)]
pub struct Io {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prediction log (JSONL).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub io: Io,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Apply the temperature learned in this checkpoint before scoring.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub c_min: Option<f64>,
    #[arg(long)]
    pub u_max_frac: Option<f64>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MiningFlags {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub strict_alignment: Option<bool>,
    #[arg(long)]
    pub use_gold_positive: Option<bool>,
    #[arg(long)]
    pub hard_negatives: Option<bool>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub io: Io,
    #[command(flatten)]
    pub mining: MiningFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub io: Io,
    #[command(flatten)]
    pub mining: MiningFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub projection_dim: Option<usize>,
    #[arg(long)]
    pub calibrate_temperature: Option<bool>,
    /// Per-epoch loss CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub loss_history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub io: Io,
    #[arg(long)]
    pub c_min: Option<f64>,
    #[arg(long)]
    pub u_max_frac: Option<f64>,
    /// Apply the temperature learned in this checkpoint before deciding.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n_records: usize,
    #[arg(long, default_value_t = 20)]
    pub vocab_size: u32,
    #[arg(long, default_value_t = 0.3)]
    pub calib_rho: f64,
    #[arg(long, default_value_t = 16)]
    pub d_in: usize,
    #[arg(long, default_value_t = 8)]
    pub d_tok: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.7)]
    pub base_accuracy: f64,
    #[arg(long, default_value_t = 2.0)]
    pub base_temperature: f64,
    #[arg(long, default_value_t = 0.2)]
    pub peaked_frac: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub configs: usize,
}
