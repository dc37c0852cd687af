//! `gmip`: trade-off curves, privacy accounting, noise calibration and
//! membership-inference audits from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::Format;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GMIP_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "gmip", version, about = "Membership-inference privacy for noisy SGD")]
struct Cli {
    /// Output format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Directory for curve, ROC and trace files.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate a trade-off curve.
    Tradeoff(TradeoffArgs),
    /// Per-step and composed privacy levels.
    Accountant(AccountantArgs),
    /// Noise level reaching a target privacy level.
    Calibrate(CalibrateArgs),
    /// Regenerate published tables.
    Reproduce {
        #[command(subcommand)]
        what: ReproduceWhat,
    },
    /// Empirical membership-inference audits.
    Audit {
        #[command(subcommand)]
        kind: AuditKind,
    },
    /// Train a synthetic model with noisy SGD and record attack traces.
    Train(TrainArgs),
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("curve").required(true))]
struct TradeoffArgs {
    /// Gaussian curve with this μ.
    #[arg(long, group = "curve", value_name = "MU")]
    gmip: Option<f64>,

    /// One-step curve of noisy SGD.
    #[arg(long, group = "curve", num_args = 5, value_names = ["N", "D", "TAU2", "C", "K"], allow_negative_numbers = true)]
    onestep: Option<Vec<f64>>,

    /// Number of tabulated points; without it the curve is evaluated
    /// exactly on the default α grid.
    #[arg(long)]
    grid: Option<usize>,

    /// File name inside the output directory.
    #[arg(long, default_value = "tradeoff.csv")]
    output: String,
}

#[derive(Args, Debug)]
struct AccountantArgs {
    /// JSON file holding the inputs, or a previous JSON report.
    #[arg(long, conflicts_with_all = ["n", "d"])]
    config: Option<PathBuf>,

    /// Batch size.
    #[arg(long, required_unless_present = "config")]
    n: Option<u64>,

    /// Parameter count.
    #[arg(long, required_unless_present = "config")]
    d: Option<u64>,

    /// Variance of the noise added to the batch mean.
    #[arg(long, default_value_t = 0.0)]
    tau2: f64,

    /// Clipping norm; `inf` disables clipping.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,

    /// Gradient susceptibility; defaults to d.
    #[arg(long)]
    k: Option<f64>,

    /// Compose this many identical steps.
    #[arg(long, conflicts_with_all = ["subsample", "convert"])]
    steps: Option<u64>,

    /// Subsampled composition over a dataset of N points for EPOCHS epochs.
    #[arg(long, num_args = 2, value_names = ["N", "EPOCHS"], conflicts_with = "convert")]
    subsample: Option<Vec<f64>>,

    /// Convert a single-step level between notions (uses K = d).
    #[arg(long, value_enum, requires = "mu")]
    convert: Option<Conversion>,

    /// Level to convert.
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Conversion {
    DpToMip,
    MipToDp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum NotionArg {
    Gmip,
    Gdp,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    notion: NotionArg,

    /// Target μ.
    #[arg(long)]
    mu: f64,

    /// Named hyperparameter preset (cifar10, purchase, adult).
    #[arg(long, conflicts_with_all = ["dataset_size", "batch_size", "epochs", "d"])]
    dataset: Option<String>,

    #[arg(long, required_unless_present = "dataset")]
    dataset_size: Option<u64>,

    #[arg(long, required_unless_present = "dataset")]
    batch_size: Option<u64>,

    #[arg(long, required_unless_present = "dataset")]
    epochs: Option<f64>,

    /// Parameter count.
    #[arg(long, required_unless_present = "dataset")]
    d: Option<u32>,

    /// Clipping norm; overrides the preset value.
    #[arg(long)]
    clip: Option<f64>,

    /// Gradient susceptibility; defaults to d.
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum ReproduceWhat {
    /// The 6 × 20 noise table with a diff against the printed values.
    TauTable,
}

#[derive(Subcommand, Debug)]
enum AuditKind {
    /// Simulated gradient likelihood-ratio attack.
    GlirSim(GlirSimArgs),
    /// Score recorded traces against a background file.
    GlirTrace(GlirTraceArgs),
    /// Loss attack on ordinary least squares.
    Linreg(LinregArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Uniform,
}

#[derive(Args, Debug)]
struct GlirSimArgs {
    /// Batch size.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Gradient dimension.
    #[arg(long, default_value_t = 650)]
    d: usize,
    /// Trials per class.
    #[arg(long, default_value_t = 20_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// SGD steps per trial.
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, default_value_t = 0.0)]
    tau2: f64,
    /// Per-example clipping norm; `inf` disables clipping.
    #[arg(long, default_value_t = f64::INFINITY)]
    clip: f64,
    #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
    family: FamilyArg,
    /// Estimate the gradient law from this many background samples instead
    /// of using the true parameters.
    #[arg(long)]
    background: Option<usize>,
    #[arg(long, default_value_t = gmip::glir::DEFAULT_RIDGE)]
    ridge: f64,
    /// Slack of the confidence check in standard errors.
    #[arg(long, default_value_t = 3.0)]
    k_se: f64,
}

#[derive(Args, Debug)]
struct GlirTraceArgs {
    /// Trace files, binary or CSV.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Background gradient file.
    #[arg(long)]
    background: PathBuf,
    /// Batch size for CSV traces, which do not record it.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    tau2: f64,
    #[arg(long, default_value_t = gmip::glir::DEFAULT_RIDGE)]
    ridge: f64,
}

#[derive(Args, Debug)]
struct LinregArgs {
    /// Training points.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Features.
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Label noise variance.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON training spec: task, config and probes.
    spec: PathBuf,
    /// Write trace files as CSV instead of binary.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { output::EXIT_USAGE } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
