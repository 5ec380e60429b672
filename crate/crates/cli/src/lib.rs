//! Command-line pipeline: data generation, augmentation, sensor training,
//! detector fitting, evaluation, configuration grids and closed-loop runs.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "safeocc", version, about = "Novelty detection for CNN sensors")]
pub struct Cli {
    /// Manifest to update; defaults to manifest.json next to the output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll a simulator under random control and store the rendered frames.
    GenData(GenDataArgs),
    /// Append disturbed copies of every simulator frame.
    Augment(AugmentArgs),
    /// Train a CNN sensor on a dataset's training part.
    TrainSensor(TrainSensorArgs),
    /// Fit a novelty detector in a sensor's feature space.
    FitDetector(FitDetectorArgs),
    /// Sensor error and detector accuracy on the test sets.
    Eval(EvalArgs),
    /// Accuracy of every detector configuration in the enumeration.
    Grid(GridArgs),
    /// Closed-loop cart-pole run with an optional safety system.
    Simulate(SimulateArgs),
    /// Check that every file a manifest references exists.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub env: String,
    /// Defaults to 60 for the pendulum and 120 for the cart-pole.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Image side in pixels; defaults to 64 for the pendulum and 128 for the cart-pole.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated disturbance kinds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub kinds: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; the input is rewritten in place when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainSensorArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Architecture name; defaults to the dataset's environment.
    #[arg(long)]
    pub arch: Option<String>,
    /// Use the wider filter schedule.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Pick the learning rate by one-epoch training loss.
    #[arg(long)]
    pub lr_sweep: bool,
    #[arg(long, value_delimiter = ',')]
    pub lr_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
    /// Model file; the history CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitDetectorArgs {
    #[arg(long)]
    pub sensor: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Detector configuration as a JSON file.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// config1, config2 or cartpole.
    #[arg(long, required_unless_present = "config")]
    pub preset: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    /// Choose the kernel width on the validation part.
    #[arg(long, conflicts_with = "gamma")]
    pub calibrate_gamma: bool,
    #[arg(long, value_delimiter = ',')]
    pub gamma_multipliers: Option<Vec<f64>>,
    #[arg(long, default_value_t = pipeline::DEFAULT_MIN_NORMAL_PCT)]
    pub min_normal_pct: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub sensor: PathBuf,
    /// Detector files; two or more also yield a union row.
    #[arg(long, value_delimiter = ',')]
    pub detectors: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Test sets: original and disturbance kinds; all by default.
    #[arg(long, value_delimiter = ',')]
    pub test_sets: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub sensor: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub test_sets: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "cartpole")]
    pub env: String,
    #[arg(long)]
    pub sensor: PathBuf,
    #[arg(long)]
    pub detector: Option<PathBuf>,
    /// clean or a disturbance kind.
    #[arg(long, default_value = "clean")]
    pub scenario: String,
    #[arg(long, default_value_t = 150)]
    pub onset: usize,
    #[arg(long, default_value_t = 400)]
    pub horizon: usize,
    /// Consecutive novel verdicts that raise the alarm.
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value = "freeze_last_control")]
    pub recourse: String,
    /// Run the detector but never intervene.
    #[arg(long)]
    pub no_safety: bool,
    /// Feed the controller the true angle instead of the sensor estimate.
    #[arg(long)]
    pub true_state: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Manifest to check.
    pub path: PathBuf,
}

/// Runs one command and returns the process exit code. Failures are
/// reported as one JSON line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .map(|l| l.trim())
                .filter(|l| !l.is_empty())
                .collect();
            let line = text.join(" ");
            eprintln!("{}", CliError::validation(line.trim_start_matches("error: ")).to_line());
            return ErrorKind::Validation.exit_code();
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.kind.exit_code()
        }
    }
}
