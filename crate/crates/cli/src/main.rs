//! `spro`: reproducible experiments with low-loss simplexes and complexes.
//!
//! Exit codes: 0 on success, 2 when the config or arguments are invalid,
//! 3 when training diverges, 1 for anything else.

mod commands;
mod config;
mod out;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use spro_core::checkpoint::CheckpointError;
use spro_core::datasets::DataError;
use spro_core::ensemble::EnsembleError;
use spro_core::metrics::MetricsError;
use spro_core::opt::TrainError;
use spro_core::spro::SproError;
use spro_core::surface::SurfaceError;

use commands::SproMode;
use config::ExperimentConfig;
use out::OutDir;

/// A problem with the config or the arguments, found before or during a run.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(
    name = "spro",
    version,
    about = "Low-loss simplexes and simplicial complexes of small neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset splits as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one mode with SGD.
    TrainBase {
        #[command(flatten)]
        common: Common,
    },
    /// Grow simplexes at modes, or train the connectors of a layout.
    Spro {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: SproMode,
        /// Connectors per simplex (espro).
        #[arg(long)]
        k: Option<usize>,
        /// Complex layout, JSON or TOML (connect).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Mode checkpoints, in layout order.
        #[arg(long, num_args = 1.., required = true)]
        modes: Vec<PathBuf>,
    },
    /// Grow a complex between two modes until its volume collapses.
    ProbeDim {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 2, required = true)]
        modes: Vec<PathBuf>,
        #[arg(long, default_value_t = 12)]
        max_k: usize,
        /// Samples per simplex for the accuracy statistics.
        #[arg(long, default_value_t = 25)]
        samples: usize,
    },
    /// Ensemble a complex and report accuracy, NLL and calibration.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        complex: PathBuf,
        /// Samples per simplex to sweep, e.g. 1,5,25,100,200.
        #[arg(long, value_delimiter = ',')]
        j_sweep: Vec<usize>,
        /// Fit a temperature on the validation split.
        #[arg(long)]
        fit_temperature: bool,
    },
    /// Loss over the plane through three vertices.
    Surface {
        #[command(flatten)]
        common: Common,
        /// `checkpoint.json[:vertex]`, given three times.
        #[arg(long = "vertex")]
        vertices: Vec<String>,
        /// Complex checkpoint to take a face from.
        #[arg(long, requires = "face")]
        complex: Option<PathBuf>,
        /// Three comma-separated vertex ids of `--complex`.
        #[arg(long, requires = "complex")]
        face: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainBase { .. } => "train-base",
            Command::Spro { .. } => "spro",
            Command::ProbeDim { .. } => "probe-dim",
            Command::Eval { .. } => "eval",
            Command::Surface { .. } => "surface",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::TrainBase { common }
            | Command::Spro { common, .. }
            | Command::ProbeDim { common, .. }
            | Command::Eval { common, .. }
            | Command::Surface { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let common = cli.command.common();
    let config = ExperimentConfig::load(&common.config, common.seed)?;
    let root = common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Invalid("no output directory: pass --out or set output_dir".into()))?;
    let mut out = OutDir::create(&root)?;
    out.note(format!("spro {name}, seed {}", config.seed));
    match &cli.command {
        Command::GenData { .. } => commands::gen_data(&config, &mut out)?,
        Command::TrainBase { .. } => commands::train_base(&config, &mut out)?,
        Command::Spro {
            mode,
            k,
            spec,
            modes,
            ..
        } => commands::spro(&config, &mut out, *mode, *k, spec.as_deref(), modes)?,
        Command::ProbeDim {
            modes,
            max_k,
            samples,
            ..
        } => commands::probe_dim(&config, &mut out, modes, *max_k, *samples)?,
        Command::Eval {
            complex,
            j_sweep,
            fit_temperature,
            ..
        } => commands::eval(&config, &mut out, complex, j_sweep, *fit_temperature)?,
        Command::Surface {
            vertices,
            complex,
            face,
            ..
        } => commands::surface(
            &config,
            &mut out,
            vertices,
            complex.as_deref(),
            face.as_deref(),
        )?,
    }
    out.finish(name, config.seed)
}

fn diverged(e: &TrainError) -> bool {
    matches!(e, TrainError::Diverged { .. })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return if diverged(e) { 3 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<SproError>() {
            return match e {
                SproError::Train(t) if diverged(t) => 3,
                SproError::InvalidConfig(_)
                | SproError::InvalidSpec(_)
                | SproError::NotInComplex(_) => 2,
                SproError::Train(TrainError::InvalidConfig(_)) => 2,
                _ => 1,
            };
        }
        if cause.is::<Invalid>() || cause.is::<CheckpointError>() || cause.is::<MetricsError>() {
            return 2;
        }
        if let Some(DataError::InvalidConfig(_) | DataError::Schema(_) | DataError::Parse { .. }) =
            cause.downcast_ref::<DataError>()
        {
            return 2;
        }
        if let Some(EnsembleError::InvalidConfig(_) | EnsembleError::DimensionMismatch { .. }) =
            cause.downcast_ref::<EnsembleError>()
        {
            return 2;
        }
        if let Some(SurfaceError::Collinear | SurfaceError::Resolution(_) | SurfaceError::Margin) =
            cause.downcast_ref::<SurfaceError>()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
