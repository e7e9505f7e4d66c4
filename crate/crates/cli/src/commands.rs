use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use flocking::checks::{self, Check};
use flocking::evolution::{
    default_candidates, evolve_observed, rate_vs_gap_report, write_checkpoint, write_values, InitialCondition,
    SolverConfig,
};
use flocking::grid::Mesh;
use flocking::spectrum::spectral_report;
use flocking::stationary::{self, bifurcation_curve, order_parameter, Branch, StationarySettings};
use flocking::tables;
use flocking::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, GridRequest, NoiseRange};
use crate::CliError;

/// Where a CSV goes.
#[derive(Debug, Clone, PartialEq)]
pub enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    pub fn resolve(explicit: Option<PathBuf>, dir: Option<&Path>, name: &str) -> Sink {
        match (explicit, dir) {
            (Some(path), _) => Sink::File(path),
            (None, Some(dir)) => Sink::File(dir.join(format!("{name}.csv"))),
            (None, None) => Sink::Stdout,
        }
    }

    /// Writes the table; called only once all rows are computed.
    fn write<H: AsRef<str>>(&self, header: &[H], rows: Vec<Vec<String>>) -> Result<(), CliError> {
        match self {
            Sink::Stdout => tables::write_csv(io::stdout().lock(), header, rows).map_err(CliError::from),
            Sink::File(path) => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(|e| output_error(parent, e))?;
                }
                let file = fs::File::create(path).map_err(|e| output_error(path, e))?;
                tables::write_csv(io::BufWriter::new(file), header, rows)?;
                eprintln!("wrote {}", path.display());
                Ok(())
            }
        }
    }
}

fn output_error(path: &Path, e: io::Error) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

fn settings(file: Option<StationarySettings>) -> Result<StationarySettings, CliError> {
    let s = file.unwrap_or_default();
    s.validate()?;
    Ok(s)
}

fn or_default<T: Clone>(flag: Vec<T>, file: Option<Vec<T>>, default: &[T]) -> Vec<T> {
    if !flag.is_empty() {
        flag
    } else {
        file.unwrap_or_else(|| default.to_vec())
    }
}

pub fn critical_noise(
    d: Vec<usize>,
    alpha: Vec<f64>,
    file: config::CriticalFile,
    out: Sink,
) -> Result<(), CliError> {
    let settings = settings(file.settings)?;
    let dims = or_default(d, file.d, &[1]);
    let alphas = or_default(alpha, file.alpha, &[2.0]);
    let pairs: Vec<(usize, f64)> = dims.iter().flat_map(|&d| alphas.iter().map(move |&a| (d, a))).collect();
    for &(d, a) in &pairs {
        config::params(d, a, 1.0)?;
    }
    let rows = tables::critical_table(&pairs, &settings)?;
    for r in &rows {
        eprintln!("d = {}  alpha = {:<6}  D* = {:.6}", r.dim, r.alpha, r.critical);
    }
    out.write(&tables::CRITICAL_HEADER, rows.iter().map(|r| r.fields()).collect())
}

fn report_failures(failures: &[(f64, Error)], what: &str) -> Result<(), CliError> {
    for (noise, e) in failures {
        eprintln!("D = {noise}: {e}");
    }
    if failures.is_empty() {
        return Ok(());
    }
    let message = format!("{} of the {what} points failed", failures.len());
    if failures.iter().all(|(_, e)| e.is_config_error()) {
        Err(CliError::Config(message))
    } else {
        Err(CliError::Numerics(message))
    }
}

pub fn bifurcation(
    d: Option<usize>,
    alpha: Option<f64>,
    noise: &[f64],
    range: Option<NoiseRange>,
    file: config::BifurcationFile,
    out: Sink,
) -> Result<(), CliError> {
    let settings = settings(file.settings)?;
    let dim = d.or(file.d).unwrap_or(1);
    let alpha = alpha.or(file.alpha).unwrap_or(2.0);
    let fallback = NoiseRange { start: 0.1, end: 0.6, count: 51 };
    let grid = config::noise_grid(noise, range, file.noise, file.range, fallback);
    let curve = bifurcation_curve(dim, alpha, &grid, &settings)?;
    let polarized = curve.points.iter().filter(|p| p.branch == Branch::Polarized).count();
    eprintln!("{} noise values, {polarized} polarized states", grid.len());
    out.write(&tables::BIFURCATION_HEADER, curve.points.iter().map(tables::bifurcation_fields).collect())?;
    report_failures(&curve.failures, "bifurcation")
}

pub fn h_curve(
    d: Vec<usize>,
    alpha: Option<f64>,
    noise: &[f64],
    range: Option<NoiseRange>,
    file: config::HCurveFile,
    out: Sink,
) -> Result<(), CliError> {
    let settings = settings(file.settings)?;
    let dims = or_default(d, file.d, &[1, 2, 3]);
    let alpha = alpha.or(file.alpha).unwrap_or(2.0);
    let fallback = NoiseRange { start: 0.05, end: 1.2, count: 116 };
    let grid = config::noise_grid(noise, range, file.noise, file.range, fallback);
    for &d in &dims {
        config::params(d, alpha, 1.0)?;
    }
    if grid.iter().any(|n| !(*n > 0.0)) {
        return Err(CliError::Config("noise values must be positive".into()));
    }
    let rows = tables::h_curve(&dims, alpha, &grid, &settings)?;
    out.write(&tables::H_CURVE_HEADER, rows.iter().map(|r| r.fields()).collect())
}

pub fn hu_curve(
    d: Option<usize>,
    alpha: Option<f64>,
    noise: &[f64],
    u_max: Option<f64>,
    points: Option<usize>,
    file: config::HuCurveFile,
    out: Sink,
) -> Result<(), CliError> {
    let settings = settings(file.settings)?;
    let dim = d.or(file.d).unwrap_or(2);
    let alpha = alpha.or(file.alpha).unwrap_or(2.0);
    let noises = or_default(noise.to_vec(), file.noise, &[0.2, 0.25, 0.3, 0.35, 0.4, 0.45]);
    let u_max = u_max.or(file.u_max).unwrap_or(1.5);
    let points = points.or(file.points).unwrap_or(151);
    if !(u_max > 0.0) || points < 2 {
        return Err(CliError::Config("need u_max > 0 and at least two points".into()));
    }
    for &n in &noises {
        config::params(dim, alpha, n)?;
    }
    let u_grid: Vec<f64> = (0..points).map(|k| u_max * k as f64 / (points - 1) as f64).collect();
    let rows = tables::consistency_curve(dim, alpha, &noises, &u_grid, &settings)?;
    out.write(&tables::CONSISTENCY_HEADER, rows.iter().map(|r| r.fields()).collect())
}

/// Evolve flags after parsing.
pub struct EvolveFlags {
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub noise: Option<f64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub grid: GridRequest,
    pub symmetric: bool,
    pub compare_spectrum: bool,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvolveSummary {
    params: flocking::ModelParams,
    solver: SolverConfig,
    initial: InitialCondition,
    steps: usize,
    limit: Option<String>,
    final_mean_velocity: [f64; 2],
    max_mass_drift: f64,
    max_free_energy_increase: f64,
    lipschitz_bound: f64,
    fitted_rate: Option<flocking::evolution::RateFit>,
    comparison: Option<flocking::evolution::RateComparison>,
}

pub fn evolve(flags: EvolveFlags, file: config::EvolveFile, out: Sink, output_dir: Option<&Path>) -> Result<(), CliError> {
    let settings = settings(file.settings)?;
    let params = config::params(
        flags.d.or(file.d).unwrap_or(1),
        flags.alpha.or(file.alpha).unwrap_or(2.0),
        flags.noise.or(file.noise).unwrap_or(0.8),
    )?;
    let order = order_parameter(&params, &settings)?.unwrap_or(0.0);
    let initial = file.initial.unwrap_or(InitialCondition::Perturbed { order: 0.0, amplitude: 0.3 });
    let reach = match initial {
        InitialCondition::Gaussian { center, .. } => order.max(center.abs()),
        _ => order,
    };
    let grid_flags_given = flags.grid.kind.is_some()
        || flags.grid.cells.is_some()
        || flags.grid.radial_cells.is_some()
        || flags.grid.angular_cells.is_some()
        || flags.grid.radius.is_some();
    let geometry = match file.geometry {
        Some(g) if !grid_flags_given => {
            g.validate()?;
            g
        }
        _ => flags.grid.or(file.grid()).build(&params, reach)?,
    };
    let mut solver = SolverConfig::new(
        geometry,
        flags.dt.or(file.dt).unwrap_or(0.01),
        flags.t_final.or(file.t_final).unwrap_or(50.0),
    );
    if let Some(t) = file.time_stepping {
        solver.time_stepping = t;
    }
    if let Some(f) = file.flux_scheme {
        solver.flux_scheme = f;
    }
    if let Some(s) = file.diagnostics_stride {
        solver.diagnostics_stride = s;
    }
    if let Some(w) = file.fit_window {
        solver.fit_window = w;
    }
    solver.validate()?;
    let symmetric = flags.symmetric || file.symmetric.unwrap_or(false);
    let checkpoint_every = flags.checkpoint_every.or(file.checkpoint_every);
    if checkpoint_every == Some(0) {
        return Err(CliError::Config("checkpoint_every must be positive".into()));
    }
    let checkpoint_dir = flags
        .checkpoint_dir
        .or(file.checkpoint_dir)
        .or_else(|| output_dir.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));

    let mesh = Arc::new(Mesh::new(geometry)?);
    let f0 = initial.build(&mesh, &params, &settings)?;
    if symmetric && f0.mean_velocity()[1].abs() > 1e-12 {
        return Err(CliError::Config("a symmetric run needs an initial mean velocity on the first axis".into()));
    }
    let candidates = default_candidates(&mesh, &params, &settings)?;
    if checkpoint_every.is_some() {
        fs::create_dir_all(&checkpoint_dir).map_err(|e| output_error(&checkpoint_dir, e))?;
    }
    let observer = |step: usize, time: f64, f: &flocking::grid::GridDensity| -> flocking::Result<()> {
        if let Some(every) = checkpoint_every {
            if step.is_multiple_of(every) {
                let stem = checkpoint_dir.join(format!("checkpoint_{step:08}"));
                write_checkpoint(&stem, f, &params, step, time)
                    .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", stem.display())))?;
            }
        }
        Ok(())
    };
    let trace = match evolve_observed(&f0, &params, &solver, &candidates, symmetric, observer) {
        Ok(trace) => trace,
        Err(Error::PositivityViolation { time, cell, value, state }) => {
            let stem = checkpoint_dir.join("positivity_failure");
            let step = (time / solver.dt).round() as usize;
            match write_values(&stem, &geometry, &state, &params, step, time) {
                Ok(()) => eprintln!("state dumped to {}", stem.with_extension("bin").display()),
                Err(e) => eprintln!("could not dump the state: {e}"),
            }
            return Err(CliError::Numerics(format!("positivity lost at t = {time}: f[{cell}] = {value:e}")));
        }
        Err(e) => return Err(e.into()),
    };

    let comparison = if flags.compare_spectrum || file.compare_spectrum.unwrap_or(false) {
        match trace.limit {
            Some(k) => {
                let branch = if candidates[k].reference.u[0] > 0.0 { Branch::Polarized } else { Branch::Isotropic };
                let report = spectral_report(&params, geometry, branch, &settings)?;
                rate_vs_gap_report(&trace, &report)
            }
            None => None,
        }
    } else {
        None
    };

    let last = trace.final_row();
    eprintln!(
        "{} steps, final mean velocity ({:.6}, {:.6}), mass drift {:.2e}, largest free-energy increase {:.2e}",
        trace.steps, last.mean_velocity[0], last.mean_velocity[1], trace.max_mass_drift, trace.max_free_energy_increase
    );
    match &trace.fitted_rate {
        Some(fit) => eprintln!("fitted decay rate {:.6} (R^2 = {:.6}, {} points)", fit.rate, fit.r_squared, fit.points),
        None => eprintln!("no decay rate fitted"),
    }
    if let Some(c) = &comparison {
        eprintln!(
            "predicted 2 c_opt = {:.6}, deviation {:.1}% (tolerance {:.0}%){}",
            c.predicted,
            100.0 * c.relative_deviation,
            100.0 * c.tolerance,
            if c.flagged { ", FLAGGED" } else { "" }
        );
    }
    if let Some(path) = flags.summary.or(file.summary) {
        let summary = EvolveSummary {
            params,
            solver,
            initial,
            steps: trace.steps,
            limit: trace.limit.map(|k| trace.candidate_names[k].clone()),
            final_mean_velocity: last.mean_velocity,
            max_mass_drift: trace.max_mass_drift,
            max_free_energy_increase: trace.max_free_energy_increase,
            lipschitz_bound: trace.lipschitz_bound,
            fitted_rate: trace.fitted_rate,
            comparison,
        };
        let mut text = serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Numerics(format!("cannot serialize the summary: {e}")))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| output_error(&path, e))?;
    }
    out.write(&tables::trace_header(&trace), tables::trace_rows(&trace))
}

#[allow(clippy::too_many_arguments)]
pub fn spectrum(
    d: Option<usize>,
    alpha: Option<f64>,
    noise: &[f64],
    range: Option<NoiseRange>,
    reference: Option<Branch>,
    grid: GridRequest,
    file: config::SpectrumFile,
    out: Sink,
) -> Result<(), CliError> {
    let settings = settings(file.settings)?;
    let dim = d.or(file.d).unwrap_or(1);
    let alpha = alpha.or(file.alpha).unwrap_or(2.0);
    let branch = reference.or(file.reference).unwrap_or(Branch::Isotropic);
    config::params(dim, alpha, 1.0)?;
    let grid = grid.or(file.grid());
    let noises = if noise.is_empty() && range.is_none() && file.noise.is_none() && file.range.is_none() {
        // ten points on the side of D* where the reference exists
        let critical = stationary::critical_noise(dim, alpha, &settings)?;
        let (lo, hi) = match branch {
            Branch::Isotropic => (1.05, 2.0),
            Branch::Polarized => (0.4, 0.95),
        };
        NoiseRange { start: lo * critical, end: hi * critical, count: 10 }.values()
    } else {
        config::noise_grid(noise, range, file.noise, file.range, NoiseRange { start: 0.0, end: 0.0, count: 0 })
    };
    for &n in &noises {
        config::params(dim, alpha, n)?;
    }
    let results: Vec<(f64, Result<_, Error>)> = noises
        .par_iter()
        .map(|&n| {
            let run = || {
                let params = flocking::ModelParams::new(dim, alpha, n)?;
                let u = match branch {
                    Branch::Isotropic => 0.0,
                    Branch::Polarized => order_parameter(&params, &settings)?.unwrap_or(0.0),
                };
                let geometry = grid.build(&params, u).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                spectral_report(&params, geometry, branch, &settings)
            };
            (n, run())
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (n, r) in results {
        match r {
            Ok(report) => {
                eprintln!(
                    "D = {:.4}  Lambda = {:.6}  D Lambda = {:.6}  c_opt = {:.6}  rate = {:.6}",
                    n, report.lambda_poincare, report.c_paper, report.c_coercive_opt, report.predicted_rate
                );
                rows.push(tables::spectrum_fields(&report));
            }
            Err(e) => failures.push((n, e)),
        }
    }
    out.write(&tables::SPECTRUM_HEADER, rows)?;
    report_failures(&failures, "spectrum")
}

pub fn check(names: Vec<String>, file: config::CheckFile, out: Sink) -> Result<(), CliError> {
    let settings = settings(file.settings)?;
    let names = if names.is_empty() { file.checks.unwrap_or_default() } else { names };
    let selected: Vec<Check> = if names.is_empty() || names.iter().any(|n| n == "all") {
        Check::ALL.to_vec()
    } else {
        names.iter().map(|n| n.parse::<Check>()).collect::<Result<_, _>>()?
    };
    let mut reports = Vec::new();
    for c in selected {
        let report = checks::run(c, &settings)?;
        let status = if report.passed() { "PASS" } else { "FAIL" };
        let worst = report.worst.map(|w| format!(", worst {w:.3e}")).unwrap_or_default();
        eprintln!("{status} {} ({} cases{worst})", c.name(), report.cases);
        for note in &report.notes {
            eprintln!("     {note}");
        }
        for failure in report.failures.iter().take(5) {
            eprintln!("     {failure}");
        }
        reports.push(report);
    }
    out.write(&tables::CHECK_HEADER, reports.iter().map(tables::check_fields).collect())?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::Numerics(format!("{failed} check suite(s) failed")));
    }
    Ok(())
}
