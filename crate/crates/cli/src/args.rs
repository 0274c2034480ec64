use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use das_core::baselines::{FdMode, DEFAULT_ATC_THRESHOLDS};
use das_core::matching::DEFAULT_CONF_THRESH;
use das_core::score::DEFAULT_LAMBDA;

/// Label-free checkpoint selection for domain-adaptive object detectors.
#[derive(Debug, Parser)]
#[command(name = "das", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every checkpoint and pick the best one.
    Score(ScoreArgs),
    /// Compute the PS, ES, ATC and FD baseline scores.
    Baselines(BaselineArgs),
    /// Supervised mAP@0.5 of every checkpoint against the run's ground truth.
    EvalMap(EvalArgs),
    /// Correlate every score with mAP and compare the selections.
    Corr(CorrArgs),
    /// Generate a synthetic run directory.
    Synth(SynthArgs),
    /// Check that a run can be scored.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Structured JSON document.
    Doc,
    /// Aligned text table.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FdModeArg {
    Full,
    Diagonal,
}

impl From<FdModeArg> for FdMode {
    fn from(m: FdModeArg) -> Self {
        match m {
            FdModeArg::Full => FdMode::Full,
            FdModeArg::Diagonal => FdMode::Diagonal,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "doc")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct Thresh {
    /// Minimum detection confidence.
    #[arg(long, default_value_t = DEFAULT_CONF_THRESH, value_parser = parse_conf_thresh)]
    pub conf_thresh: f64,
}

#[derive(Debug, Args)]
pub struct LambdaArg {
    /// Weight of the prototype term.
    #[arg(long, default_value_t = DEFAULT_LAMBDA, value_parser = parse_lambda)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct BaselineFlags {
    /// Comma-separated ATC thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ATC_THRESHOLDS, value_parser = parse_conf_thresh)]
    pub atc_thresholds: Vec<f64>,
    #[arg(long, value_enum, default_value = "full")]
    pub fd_mode: FdModeArg,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub lambda: LambdaArg,
    #[command(flatten)]
    pub thresh: Thresh,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub thresh: Thresh,
    #[command(flatten)]
    pub baselines: BaselineFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub lambda: LambdaArg,
    #[command(flatten)]
    pub thresh: Thresh,
    #[command(flatten)]
    pub baselines: BaselineFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with synthetic config overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Store proposal features inline instead of in binary sidecars.
    #[arg(long)]
    pub inline_features: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub thresh: Thresh,
}

fn parse_conf_thresh(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1)"))
    }
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and non-negative"))
    }
}
