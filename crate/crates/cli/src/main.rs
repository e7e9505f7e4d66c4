//! `flocking`: command-line front end of the flocking numerical laboratory.
//!
//! Exit codes: 0 on success, 2 for invalid flags or configuration, 3 when the
//! numerics fail (including failed invariant checks).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{GeometryKind, NoiseRange};
use flocking::stationary::Branch;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "FLOCKING_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "flocking", version, about = "Numerical laboratory for the noisy Cucker-Smale flocking equation")]
struct Cli {
    /// Worker threads for sweeps (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for outputs without an explicit path; defaults to $FLOCKING_OUTPUT_DIR,
    /// and to standard output when neither is set.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file; flags take precedence over its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Critical noise D* for each (d, alpha) pair.
    CriticalNoise {
        /// Dimensions (comma separated).
        #[arg(long, value_delimiter = ',')]
        d: Vec<usize>,
        /// Self-propulsion strengths (comma separated).
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Isotropic and polarized stationary states along a noise sweep.
    Bifurcation {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Noise values (comma separated).
        #[arg(long, value_delimiter = ',')]
        noise: Vec<f64>,
        /// Evenly spaced noise grid `start:end:count`.
        #[arg(long)]
        range: Option<NoiseRange>,
        #[command(flatten)]
        common: Common,
    },
    /// The function h_d(D) whose root is D*, for several dimensions.
    HCurve {
        #[arg(long, value_delimiter = ',')]
        d: Vec<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        noise: Vec<f64>,
        #[arg(long)]
        range: Option<NoiseRange>,
        #[command(flatten)]
        common: Common,
    },
    /// The self-consistency function of the order parameter at several noise levels.
    HuCurve {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        noise: Vec<f64>,
        /// Largest order parameter on the grid.
        #[arg(long)]
        u_max: Option<f64>,
        /// Number of order-parameter values, from 0 to u_max.
        #[arg(long)]
        points: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Time evolution on a truncated grid; writes the diagnostic trace.
    Evolve {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[command(flatten)]
        grid: GridArgs,
        /// Keep the mean velocity on the first axis.
        #[arg(long)]
        symmetric: bool,
        /// Also compute the spectral prediction for the limit and compare rates.
        #[arg(long)]
        compare_spectrum: bool,
        /// Write a checkpoint every this many steps.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// JSON summary with the fitted rate and run diagnostics.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Poincaré and coercivity constants of the linearized operator.
    Spectrum {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        noise: Vec<f64>,
        #[arg(long)]
        range: Option<NoiseRange>,
        /// Stationary state to linearize around.
        #[arg(long, value_parser = parse_branch)]
        reference: Option<Branch>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Invariant suites; `all` or a list of names.
    Check {
        /// Suite names: ipp, square, moment-lemmas, special-functions, norm-equivalence,
        /// root-uniqueness, kernel-monotonicity, consistency-forms, critical-bounds, free-energy.
        names: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args, Default)]
struct GridArgs {
    /// Grid kind (default: line for d = 1, polar otherwise).
    #[arg(long, value_enum)]
    grid: Option<GeometryKind>,
    /// Cells of a line grid.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    radial_cells: Option<usize>,
    #[arg(long)]
    angular_cells: Option<usize>,
    /// Truncation radius (default: where the density drops below 1e-16 of its peak).
    #[arg(long)]
    radius: Option<f64>,
}

impl GridArgs {
    fn request(&self) -> config::GridRequest {
        config::GridRequest {
            kind: self.grid,
            cells: self.cells,
            radial_cells: self.radial_cells,
            angular_cells: self.angular_cells,
            radius: self.radius,
        }
    }
}

fn parse_branch(s: &str) -> Result<Branch, String> {
    match s {
        "isotropic" => Ok(Branch::Isotropic),
        "polarized" => Ok(Branch::Polarized),
        _ => Err(format!("expected isotropic or polarized, got '{s}'")),
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerics(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerics(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerics(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<flocking::Error> for CliError {
    fn from(e: flocking::Error) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerics(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flocking: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let output_dir = cli.output_dir.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from));
    let sink = |common: &Common, file: Option<PathBuf>, name: &str| {
        commands::Sink::resolve(common.output.clone().or(file), output_dir.as_deref(), name)
    };
    match cli.command {
        Command::CriticalNoise { d, alpha, common } => {
            let file: config::CriticalFile = config::load(common.config.as_deref())?;
            let out = sink(&common, file.output.clone(), "critical_noise");
            commands::critical_noise(d, alpha, file, out)
        }
        Command::Bifurcation { d, alpha, noise, range, common } => {
            let file: config::BifurcationFile = config::load(common.config.as_deref())?;
            let out = sink(&common, file.output.clone(), "bifurcation");
            commands::bifurcation(d, alpha, &noise, range, file, out)
        }
        Command::HCurve { d, alpha, noise, range, common } => {
            let file: config::HCurveFile = config::load(common.config.as_deref())?;
            let out = sink(&common, file.output.clone(), "h_vs_D");
            commands::h_curve(d, alpha, &noise, range, file, out)
        }
        Command::HuCurve { d, alpha, noise, u_max, points, common } => {
            let file: config::HuCurveFile = config::load(common.config.as_deref())?;
            let out = sink(&common, file.output.clone(), "H_vs_u");
            commands::hu_curve(d, alpha, &noise, u_max, points, file, out)
        }
        Command::Evolve {
            d,
            alpha,
            noise,
            dt,
            t_final,
            grid,
            symmetric,
            compare_spectrum,
            checkpoint_every,
            checkpoint_dir,
            summary,
            common,
        } => {
            let file: config::EvolveFile = config::load(common.config.as_deref())?;
            let out = sink(&common, file.output.clone(), "entropy_decay");
            let flags = commands::EvolveFlags {
                d,
                alpha,
                noise,
                dt,
                t_final,
                grid: grid.request(),
                symmetric,
                compare_spectrum,
                checkpoint_every,
                checkpoint_dir,
                summary,
            };
            commands::evolve(flags, file, out, output_dir.as_deref())
        }
        Command::Spectrum { d, alpha, noise, range, reference, grid, common } => {
            let file: config::SpectrumFile = config::load(common.config.as_deref())?;
            let out = sink(&common, file.output.clone(), "gap_vs_D");
            commands::spectrum(d, alpha, &noise, range, reference, grid.request(), file, out)
        }
        Command::Check { names, common } => {
            let file: config::CheckFile = config::load(common.config.as_deref())?;
            let out = sink(&common, file.output.clone(), "checks");
            commands::check(names, file, out)
        }
    }
}
