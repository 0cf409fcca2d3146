//! `fp8ptq`: data generation, toy models, PTQ, evaluation and comparison
//! reports, and single-value casts.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! failure (non-finite values).

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] fp8_ptq::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fp8ptq", version, about = "FP8/INT8 post-training quantization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset container.
    GenData(GenDataArgs),
    /// Train the two-layer MLP classifier on a labeled dataset.
    TrainToy(TrainToyArgs),
    /// Build the seeded single-block transformer encoder.
    BuildEncoder(BuildEncoderArgs),
    /// Record activation ranges over calibration data as JSON.
    Calibrate(CalibrateArgs),
    /// Attach static quantization parameters to a model.
    Quantize(QuantizeArgs),
    /// Evaluate a model against its FP32 execution.
    Eval(EvalArgs),
    /// Quantize to several formats and report metrics against FP32.
    Compare(CompareArgs),
    /// Encode one value and print the bit pattern and decoded value.
    Cast(CastArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    #[value(name = "gauss_outliers")]
    GaussOutliers,
    #[value(name = "two_moons")]
    TwoMoons,
    #[value(name = "clusters")]
    Clusters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Fp32,
    Int8,
    E4m3,
    E5m2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weights {
    PerChannel,
    PerTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CastFormat {
    E4m3,
    E5m2,
    Bf16,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of gauss_outliers samples replaced by outliers.
    #[arg(long, default_value_t = 0.001)]
    pub outlier_frac: f64,
    #[arg(long, default_value_t = 50.0)]
    pub outlier_mag: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Labeled dataset container (two_moons or clusters).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildEncoderArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each feed-forward weight replaced by outliers.
    #[arg(long, default_value_t = 0.001)]
    pub outlier_frac: f64,
    #[arg(long, default_value_t = 50.0)]
    pub outlier_mag: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset container whose `x` tensor is the calibration data.
    #[arg(long)]
    pub calib: PathBuf,
    /// Output JSON file of observed ranges.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantOptions {
    #[arg(long, value_enum, default_value = "per-channel")]
    pub weights: Weights,
    /// Quantize the operands of the two matmuls inside attention.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub quant_attn_internal: bool,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset container, or a range file written by `calibrate`.
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long, value_enum, default_value = "e4m3")]
    pub format: Format,
    #[command(flatten)]
    pub quant: QuantOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report path; a CSV copy is written next to it.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset container, or a range file written by `calibrate`.
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Formats to compare; repeat the flag or separate with commas.
    #[arg(long = "format", value_enum, value_delimiter = ',', default_value = "fp32,int8,e4m3")]
    pub formats: Vec<Format>,
    #[command(flatten)]
    pub quant: QuantOptions,
    /// JSON report path; a CSV copy is written next to it.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct CastArgs {
    /// Decimal value, e.g. `17.0` or `-0.017`.
    pub value: String,
    #[arg(value_enum)]
    pub format: CastFormat,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::TrainToy(a) => commands::train_toy(&a),
        Command::BuildEncoder(a) => commands::build_encoder(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Quantize(a) => commands::quantize(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Cast(a) => commands::cast(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
