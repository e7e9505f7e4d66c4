//! Time integration of the nonlinear Fokker–Planck equation on a mesh.
//!
//! Each step solves the drift-diffusion problem implicitly with the mean
//! velocity frozen at its value from the previous step. With the exponentially
//! fitted flux the step matrix is an M-matrix whose columns sum to
//! `mu_i / dt`, so mass is conserved, positivity is kept and the discrete free
//! energy cannot increase.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::BandedMatrix;
use crate::error::{Error, Result};
use crate::flux::{face_coefficients, FluxScheme};
use crate::functionals::{fisher_information, free_energy, mean_velocity, relative_entropy, Reference};
use crate::grid::{Geometry, GridDensity, Mesh, Velocity};
use crate::model::ModelParams;
use crate::spectrum::SpectralReport;
use crate::stationary::{order_parameter, Branch, StationarySettings};

/// Values in `[-NEGATIVE_SLACK, 0)` after a step are rounded to zero.
pub const NEGATIVE_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStepping {
    /// Backward Euler in the drift-diffusion part, mean velocity lagged.
    #[default]
    SemiImplicit,
    /// Forward Euler; requires a time step below the positivity limit.
    Explicit,
}

/// Range of entropy gaps used by the exponential fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub lower: f64,
    pub upper: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self { lower: 1e-10, upper: 1e-3 }
    }
}

/// Gap below which the run counts as converged before the fit window.
pub const GAP_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub geometry: Geometry,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub time_stepping: TimeStepping,
    #[serde(default)]
    pub flux_scheme: FluxScheme,
    #[serde(default = "default_stride")]
    pub diagnostics_stride: usize,
    #[serde(default)]
    pub fit_window: FitWindow,
}

fn default_stride() -> usize {
    10
}

/// Smallest resolution accepted in any direction.
pub const MIN_RESOLUTION: usize = 32;

impl SolverConfig {
    pub fn new(geometry: Geometry, dt: f64, t_final: f64) -> Self {
        Self {
            geometry,
            dt,
            t_final,
            time_stepping: TimeStepping::default(),
            flux_scheme: FluxScheme::default(),
            diagnostics_stride: default_stride(),
            fit_window: FitWindow::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidConfig(format!("t_final must be >= 0, got {}", self.t_final)));
        }
        if self.diagnostics_stride == 0 {
            return Err(Error::InvalidConfig("diagnostics_stride must be at least 1".into()));
        }
        if !(0.0 < self.fit_window.lower && self.fit_window.lower < self.fit_window.upper) {
            return Err(Error::InvalidConfig("fit window must satisfy 0 < lower < upper".into()));
        }
        let resolutions = match self.geometry {
            Geometry::Line { cells, .. } => vec![cells],
            Geometry::Polar { radial_cells, angular_cells, .. }
            | Geometry::Disk { radial_cells, angular_cells, .. } => vec![radial_cells, angular_cells],
        };
        if resolutions.iter().any(|&n| n < MIN_RESOLUTION) {
            return Err(Error::InvalidConfig(format!(
                "resolutions must be at least {MIN_RESOLUTION}, got {resolutions:?}"
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

fn check_positivity(values: &mut [f64], time: f64) -> Result<()> {
    for (cell, v) in values.iter_mut().enumerate() {
        if !v.is_finite() || *v < -NEGATIVE_SLACK {
            return Err(Error::PositivityViolation {
                time,
                cell,
                value: *v,
                state: values.to_vec(),
            });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Advances `f` by one step of size `config.dt`, with the mean velocity
/// taken from `f`. `time` is only used in error reports.
pub fn step(f: &GridDensity, params: &ModelParams, config: &SolverConfig, time: f64) -> Result<GridDensity> {
    step_with_velocity(f, params, config, mean_velocity(f)?, time + config.dt)
}

fn step_with_velocity(
    f: &GridDensity,
    params: &ModelParams,
    config: &SolverConfig,
    u: Velocity,
    time: f64,
) -> Result<GridDensity> {
    let mesh = f.mesh();
    mesh.check_params(params)?;
    let noise = params.noise();
    let psi = mesh.tilted_potential(params, u);
    let measures = mesh.measures();
    let dt = config.dt;
    let mut values = match config.time_stepping {
        TimeStepping::SemiImplicit => {
            let mut matrix = BandedMatrix::zeros(mesh.len(), mesh.bandwidth());
            for (i, m) in measures.iter().enumerate() {
                matrix.add(i, i, m / dt);
            }
            for face in mesh.faces() {
                let jump = (psi[face.hi] - psi[face.lo]) / noise;
                let (a, b) = face_coefficients(config.flux_scheme, face.coupling, noise, jump);
                matrix.add(face.lo, face.lo, a);
                matrix.add(face.lo, face.hi, -b);
                matrix.add(face.hi, face.lo, -a);
                matrix.add(face.hi, face.hi, b);
            }
            let mut rhs: Vec<f64> = measures.iter().zip(f.values()).map(|(m, v)| m * v / dt).collect();
            matrix.factor()?.solve_in_place(&mut rhs);
            rhs
        }
        TimeStepping::Explicit => {
            let old = f.values();
            let mut outflow = vec![0.0; mesh.len()];
            let mut change = vec![0.0; mesh.len()];
            for face in mesh.faces() {
                let jump = (psi[face.hi] - psi[face.lo]) / noise;
                let (a, b) = face_coefficients(config.flux_scheme, face.coupling, noise, jump);
                let flux = a * old[face.lo] - b * old[face.hi];
                change[face.lo] -= flux;
                change[face.hi] += flux;
                outflow[face.lo] += a;
                outflow[face.hi] += b;
            }
            let limit = measures
                .iter()
                .zip(&outflow)
                .map(|(m, o)| m / o)
                .fold(f64::INFINITY, f64::min);
            if dt > limit {
                return Err(Error::InvalidConfig(format!(
                    "explicit step dt = {dt} exceeds the positivity limit {limit:e}"
                )));
            }
            old.iter()
                .zip(change.iter().zip(measures))
                .map(|(v, (c, m))| v + dt * c / m)
                .collect()
        }
    };
    check_positivity(&mut values, time)?;
    // no renormalization: the mass drift is a diagnostic of the scheme
    GridDensity::unnormalized(mesh.clone(), values)
}

/// Named equilibrium the run is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub name: String,
    pub reference: Reference,
}

/// The isotropic equilibrium and, below the critical noise, the polarized
/// one with mean velocity along `e_1`, both in their discrete form.
pub fn default_candidates(
    mesh: &Arc<Mesh>,
    params: &ModelParams,
    settings: &StationarySettings,
) -> Result<Vec<Candidate>> {
    let mut out = vec![Candidate {
        name: Branch::Isotropic.as_str().into(),
        reference: Reference::from_order(mesh, params, 0.0)?,
    }];
    if let Some(u) = order_parameter(params, settings)? {
        out.push(Candidate {
            name: Branch::Polarized.as_str().into(),
            reference: Reference::from_order(mesh, params, u)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub time: f64,
    pub mass: f64,
    pub mean_velocity: Velocity,
    pub free_energy: f64,
    pub fisher_information: f64,
    /// Relative entropy to each candidate, in candidate order.
    pub entropy_to_candidates: Vec<f64>,
}

/// Least-squares fit `ln gap ~ intercept - rate t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub candidate_names: Vec<String>,
    pub rows: Vec<TraceRow>,
    /// Index of the candidate selected by the final mean velocity.
    pub limit: Option<usize>,
    pub fitted_rate: Option<RateFit>,
    /// `max |mass(t) - mass(0)|` over all steps.
    pub max_mass_drift: f64,
    /// Largest single-step increase of the free energy (negative if it always decreased).
    pub max_free_energy_increase: f64,
    /// `max |u_f(t + dt) - u_f(t)| / dt` over all steps.
    pub lipschitz_bound: f64,
    pub steps: usize,
    pub final_density: GridDensity,
}

impl EvolutionTrace {
    /// Entropy gap to the selected limit at each stored row.
    pub fn gap_to_limit(&self) -> Option<Vec<(f64, f64)>> {
        let k = self.limit?;
        Some(self.rows.iter().map(|r| (r.time, r.entropy_to_candidates[k])).collect())
    }

    pub fn final_row(&self) -> &TraceRow {
        self.rows.last().expect("a trace always holds the initial row")
    }
}

/// Fits `ln gap` linearly in time over the points with gap in the window.
///
/// Returns `None` with fewer than three points in the window, or when the gap
/// reached [`GAP_FLOOR`] before ever entering the window.
pub fn fit_decay_rate(gaps: &[(f64, f64)], window: FitWindow) -> Option<RateFit> {
    let first_in_window = gaps.iter().position(|(_, g)| *g >= window.lower && *g <= window.upper);
    let first_floor = gaps.iter().position(|(_, g)| *g < GAP_FLOOR);
    if let (Some(floor), Some(start)) = (first_floor, first_in_window) {
        if floor < start {
            return None;
        }
    }
    let points: Vec<(f64, f64)> = gaps
        .iter()
        .filter(|(_, g)| *g >= window.lower && *g <= window.upper)
        .map(|(t, g)| (*t, g.ln()))
        .collect();
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = points.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let sty: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    let slope = sty / stt;
    let r_squared = if syy > 0.0 { sty * sty / (stt * syy) } else { 1.0 };
    Some(RateFit {
        rate: -slope,
        intercept: mean_y - slope * mean_t,
        r_squared,
        window_start: points[0].0,
        window_end: points[points.len() - 1].0,
        points: points.len(),
    })
}

fn diagnostics(
    f: &GridDensity,
    params: &ModelParams,
    candidates: &[Candidate],
    time: f64,
    free: f64,
) -> Result<TraceRow> {
    Ok(TraceRow {
        time,
        mass: f.mass(),
        mean_velocity: f.mean_velocity(),
        free_energy: free,
        fisher_information: fisher_information(f, params)?,
        entropy_to_candidates: candidates
            .iter()
            .map(|c| relative_entropy(f, &c.reference, params))
            .collect::<Result<_>>()?,
    })
}

/// Runs the solver from `f_init` to `config.t_final` and fits the decay rate
/// of the entropy gap to the candidate nearest to the final mean velocity.
pub fn evolve(
    f_init: &GridDensity,
    params: &ModelParams,
    config: &SolverConfig,
    candidates: &[Candidate],
) -> Result<EvolutionTrace> {
    evolve_observed(f_init, params, config, candidates, false, |_, _, _| Ok(()))
}

/// [`evolve`] with the mean velocity forced onto the `e_1` axis and a
/// callback after every step (used for checkpoints).
pub fn evolve_observed<F>(
    f_init: &GridDensity,
    params: &ModelParams,
    config: &SolverConfig,
    candidates: &[Candidate],
    pin_axis: bool,
    mut observer: F,
) -> Result<EvolutionTrace>
where
    F: FnMut(usize, f64, &GridDensity) -> Result<()>,
{
    config.validate()?;
    if f_init.mesh().geometry() != &config.geometry {
        return Err(Error::Geometry("initial density does not live on the configured mesh".into()));
    }
    f_init.mesh().check_params(params)?;
    let steps = config.steps();
    let initial_mass = f_init.mass();
    let mut f = f_init.clone();
    let mut free = free_energy(&f, params)?;
    let mut u = f.mean_velocity();
    let mut rows = vec![diagnostics(&f, params, candidates, 0.0, free)?];
    let (mut max_drift, mut max_increase, mut lipschitz) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for n in 1..=steps {
        let time = n as f64 * config.dt;
        let drive = if pin_axis { [u[0], 0.0] } else { u };
        let next = step_with_velocity(&f, params, config, drive, time)?;
        let next_free = free_energy(&next, params)?;
        let next_u = next.mean_velocity();
        max_drift = max_drift.max((next.mass() - initial_mass).abs());
        max_increase = max_increase.max(next_free - free);
        let du = ((next_u[0] - u[0]).powi(2) + (next_u[1] - u[1]).powi(2)).sqrt();
        lipschitz = lipschitz.max(du / config.dt);
        f = next;
        free = next_free;
        u = next_u;
        observer(n, time, &f)?;
        if n % config.diagnostics_stride == 0 || n == steps {
            rows.push(diagnostics(&f, params, candidates, time, free)?);
        }
    }
    let limit = select_limit(u, candidates);
    let mut trace = EvolutionTrace {
        candidate_names: candidates.iter().map(|c| c.name.clone()).collect(),
        rows,
        limit,
        fitted_rate: None,
        max_mass_drift: max_drift,
        max_free_energy_increase: if steps == 0 { 0.0 } else { max_increase },
        lipschitz_bound: lipschitz,
        steps,
        final_density: f,
    };
    trace.fitted_rate = trace.gap_to_limit().and_then(|g| fit_decay_rate(&g, config.fit_window));
    Ok(trace)
}

/// Evolution of densities that are even in every transverse coordinate: the
/// mean velocity is kept on the `e_1` axis throughout.
pub fn symmetric_preserving_evolve(
    f_init: &GridDensity,
    params: &ModelParams,
    config: &SolverConfig,
    candidates: &[Candidate],
) -> Result<EvolutionTrace> {
    let u = f_init.mean_velocity();
    if u[1].abs() > 1e-12 {
        return Err(Error::InvalidConfig("initial mean velocity must lie on the e_1 axis".into()));
    }
    evolve_observed(f_init, params, config, candidates, true, |_, _, _| Ok(()))
}

fn select_limit(u: Velocity, candidates: &[Candidate]) -> Option<usize> {
    let speed = (u[0] * u[0] + u[1] * u[1]).sqrt();
    candidates
        .iter()
        .enumerate()
        .map(|(k, c)| (k, (speed - c.reference.u[0].hypot(c.reference.u[1])).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

/// Fitted entropy decay rate against the spectral prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateComparison {
    pub fitted: f64,
    /// `2 c_opt`: twice the optimal coercivity constant.
    pub predicted: f64,
    pub relative_deviation: f64,
    pub tolerance: f64,
    pub flagged: bool,
    /// `2 D Lambda (1 - kappa)` for polarized references.
    pub bound_doubled: Option<f64>,
    /// `D Lambda (1 - kappa)` for polarized references.
    pub bound: Option<f64>,
}

/// Compares the fitted rate with `2 c_opt`; the tolerance is 15% around the
/// isotropic state and 25% around a polarized one. Returns `None` when the
/// trace has no fit.
pub fn rate_vs_gap_report(trace: &EvolutionTrace, spectral: &SpectralReport) -> Option<RateComparison> {
    let fit = trace.fitted_rate?;
    let predicted = spectral.predicted_rate;
    let relative_deviation = (fit.rate - predicted).abs() / predicted.abs();
    let polarized = spectral.reference == Branch::Polarized;
    let tolerance = if polarized { 0.25 } else { 0.15 };
    let bound = spectral.c_paper_polarized;
    Some(RateComparison {
        fitted: fit.rate,
        predicted,
        relative_deviation,
        tolerance,
        flagged: relative_deviation > tolerance,
        bound_doubled: bound.map(|b| 2.0 * b),
        bound,
    })
}

/// How the initial density is built on the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `exp(-|v - center e_1|^2 / (2 variance))`.
    Gaussian { center: f64, variance: f64 },
    /// Discrete stationary state times `exp(amplitude v_1)`; `order` is the
    /// continuum order parameter of the base state.
    Perturbed { order: f64, amplitude: f64 },
    /// Discrete stationary state of the given branch.
    Stationary { branch: Branch },
}

impl InitialCondition {
    pub fn build(
        &self,
        mesh: &Arc<Mesh>,
        params: &ModelParams,
        settings: &StationarySettings,
    ) -> Result<GridDensity> {
        match *self {
            InitialCondition::Gaussian { center, variance } => {
                if !(variance > 0.0) {
                    return Err(Error::InvalidConfig("variance must be positive".into()));
                }
                let speeds = mesh.speeds().to_vec();
                let velocities = mesh.velocities().to_vec();
                let logs: Vec<f64> = speeds
                    .iter()
                    .zip(&velocities)
                    .map(|(s, v)| -(s * s - 2.0 * center * v[0] + center * center) / (2.0 * variance))
                    .collect();
                let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                GridDensity::normalized(mesh.clone(), logs.iter().map(|l| (l - peak).exp()).collect())
            }
            InitialCondition::Perturbed { order, amplitude } => {
                let base = Reference::from_order(mesh, params, order)?.density;
                let values = base
                    .values()
                    .iter()
                    .zip(mesh.velocities())
                    .map(|(f, v)| f * (amplitude * v[0]).exp())
                    .collect();
                GridDensity::normalized(mesh.clone(), values)
            }
            InitialCondition::Stationary { branch } => {
                let u = match branch {
                    Branch::Isotropic => 0.0,
                    Branch::Polarized => order_parameter(params, settings)?.ok_or(Error::Domain {
                        what: "polarized initial state",
                        requirement: "D < D*",
                        noise: params.noise(),
                        critical: f64::NAN,
                    })?,
                };
                Ok(Reference::from_order(mesh, params, u)?.density)
            }
        }
    }
}

/// Sidecar describing a flat binary density dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub geometry: Geometry,
    pub cells: usize,
    pub time: f64,
    pub step: usize,
    pub params: ModelParams,
    /// Always `"f64-le"`.
    pub encoding: String,
}

/// Writes `<stem>.bin` (little-endian `f64` values) and `<stem>.json`.
pub fn write_checkpoint(
    stem: &Path,
    f: &GridDensity,
    params: &ModelParams,
    step: usize,
    time: f64,
) -> std::io::Result<()> {
    write_values(stem, f.mesh().geometry(), f.values(), params, step, time)
}

/// [`write_checkpoint`] for raw cell values, which need not form a density
/// (used to dump the state after a positivity failure).
pub fn write_values(
    stem: &Path,
    geometry: &Geometry,
    values: &[f64],
    params: &ModelParams,
    step: usize,
    time: f64,
) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(8 * values.len());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(stem.with_extension("bin"), bytes)?;
    let meta = CheckpointMeta {
        geometry: *geometry,
        cells: values.len(),
        time,
        step,
        params: *params,
        encoding: "f64-le".into(),
    };
    let mut file = fs::File::create(stem.with_extension("json"))?;
    serde_json::to_writer_pretty(&mut file, &meta)?;
    file.write_all(b"\n")
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(stem: &Path) -> Result<(CheckpointMeta, GridDensity)> {
    let io = |e: std::io::Error| Error::InvalidConfig(format!("checkpoint {}: {e}", stem.display()));
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(stem.with_extension("json")).map_err(io)?)
        .map_err(|e| Error::InvalidConfig(format!("checkpoint sidecar: {e}")))?;
    let bytes = fs::read(stem.with_extension("bin")).map_err(io)?;
    if bytes.len() != 8 * meta.cells || meta.encoding != "f64-le" {
        return Err(Error::InvalidConfig("checkpoint size or encoding mismatch".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight bytes")))
        .collect();
    let mesh = Arc::new(Mesh::new(meta.geometry)?);
    let density = GridDensity::new(mesh, values)?;
    Ok((meta, density))
}
