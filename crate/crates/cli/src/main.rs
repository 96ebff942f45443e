//! `imb-lab`: training, evaluation, information-plane export, conflict probe,
//! adversarial attacks and fixture generation for binary stochastic networks.

mod commands;
mod exit;
mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "imb-lab", version, about = "Information multi-bottleneck lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named preset: toy-12bit, mnist-512x512, mnist-small.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write logs, checkpoints and the information plane.
    Train(TrainArgs),
    /// Test error of a checkpoint, mean and std over repeated stochastic inference.
    Eval(EvalArgs),
    /// Exact information-plane trace of a run directory (or a directory of runs).
    InfoPlane(InfoPlaneArgs),
    /// Grid search for conflicting optima of the two-layer bottleneck objectives.
    ProbeConflict(ProbeArgs),
    /// L2 adversarial attack on a checkpoint.
    Attack(AttackArgs),
    /// Write the synthetic binary task as CSV or IDX fixtures.
    GenData(GenDataArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmArg {
    Joint,
    Greedy,
    Mle,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    /// Layer weights gamma_0..gamma_L, comma separated (one value broadcasts).
    #[arg(long)]
    pub gamma: Option<String>,
    /// Compression weights beta_1..beta_L, comma separated (one value broadcasts).
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// MNIST directory or training CSV replacing the configured dataset path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Train the deterministic sigmoid baseline (probabilities instead of samples).
    #[arg(long)]
    pub deterministic: bool,
    /// Also write an SVG of the information plane.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Checkpoint file or run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Particle count for stochastic inference.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Evaluate on the training split instead of the held-out one.
    #[arg(long)]
    pub train_split: bool,
}

#[derive(Args, Debug, Clone)]
pub struct InfoPlaneArgs {
    /// Run directory, checkpoint directory, or a directory of run directories.
    pub dir: PathBuf,
    #[arg(long)]
    pub plots: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ProbeArgs {
    /// Builtin instance: generic, sufficient-statistic, independence.
    #[arg(long, conflicts_with = "spec")]
    pub instance: Option<String>,
    /// TOML instance file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub beta1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta2: f64,
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Targeted,
    Untargeted,
}

#[derive(Args, Debug, Clone)]
pub struct AttackArgs {
    /// Checkpoint file or run directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of leading test images to attack.
    #[arg(long, default_value_t = 1000)]
    pub subset: usize,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Particle count of the predictive used for decisions.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatArg {
    Csv,
    Idx,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelsArg {
    Partition,
    Ranked,
}

#[derive(Args, Debug, Clone)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 12)]
    pub bits: usize,
    #[arg(long, value_enum, default_value_t = LabelsArg::Ranked)]
    pub labels: LabelsArg,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

fn init_threads() -> Result<(), exit::CliError> {
    let Ok(v) = std::env::var("IMB_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| exit::CliError::config(format!("IMB_LAB_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| exit::CliError::runtime(format!("cannot size the thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match &cli.command {
        Command::Train(a) => commands::train(&cli.common, a),
        Command::Eval(a) => commands::eval(&cli.common, a),
        Command::InfoPlane(a) => commands::info_plane(&cli.common, a),
        Command::ProbeConflict(a) => commands::probe_conflict(&cli.common, a),
        Command::Attack(a) => commands::attack(&cli.common, a),
        Command::GenData(a) => commands::gen_data(&cli.common, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
