//! `gami`: simulate data, fit GAMI-Tree models, predict, screen interactions
//! and export purified effects.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid argument, 3 data or model file
//! problem, 4 internal error.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gamitree::{GamiConfig, GamiError, Task};

#[derive(Debug, Parser)]
#[command(name = "gami", version, about = "GA2M models fitted with boosted model-based trees")]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a simulated scenario as train/valid/test CSVs.
    Simulate(SimulateArgs),
    /// Fit a model, purify it and export effects and importances.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Rank all variable pairs by interaction strength.
    Filter(FilterArgs),
    /// Purified component importances of a saved model.
    Importance(ImportanceArgs),
    /// Purified effect grids of a saved model.
    ExportEffects(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Continuous,
    Binary,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Continuous => Task::Continuous,
            TaskArg::Binary => Task::Binary,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    model: u8,
    /// Total rows before the 50/25/25 split.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, value_enum, default_value_t = TaskArg::Continuous)]
    task: TaskArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "y")]
    target: String,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

/// Fitting overrides; unset flags keep the library defaults.
#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    npairs: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    nknots: Option<usize>,
    /// Coefficient bound for node fits; `inf` disables it.
    #[arg(long)]
    max_coef: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_bins: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ConfigArgs {
    fn config(&self) -> GamiConfig {
        let mut c = GamiConfig {
            seed: self.seed,
            max_depth: self.max_depth,
            ..GamiConfig::default()
        };
        macro_rules! apply {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        apply!(rounds, npairs, learning_rate, nknots, max_coef, patience, max_bins, max_iter, min_leaf);
        c
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long, value_enum, default_value_t = TaskArg::Continuous)]
    task: TaskArg,
    #[command(flatten)]
    config: ConfigArgs,
    /// Points per axis in exported effect grids.
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Target column; metrics are reported when it is present.
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    /// Ignored when `--model-file` is given; the model's task is used.
    #[arg(long, value_enum, default_value_t = TaskArg::Continuous)]
    task: TaskArg,
    /// Screen against this model's predictions instead of the offset.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Use the four-quadrant baseline scorer.
    #[arg(long)]
    fast: bool,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ImportanceArgs {
    #[arg(long)]
    model_file: PathBuf,
    /// Training data the effects are purified against.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Gami(GamiError),
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Gami(GamiError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Gami(GamiError::InvalidArgument(_)) => 2,
            CliError::Gami(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<GamiError> for CliError {
    fn from(e: GamiError) -> Self {
        CliError::Gami(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Gami(e) => e.fmt(f),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(GamiError::InvalidArgument("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::cmd_simulate(&a),
        Command::Fit(a) => commands::cmd_fit(&a),
        Command::Predict(a) => commands::cmd_predict(&a),
        Command::Filter(a) => commands::cmd_filter(&a),
        Command::Importance(a) => commands::cmd_importance(&a),
        Command::ExportEffects(a) => commands::cmd_export_effects(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(4),
    }
}
