//! JSON configuration files. Every subcommand reads an optional file whose
//! entries are overridden by flags; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use flocking::evolution::{FitWindow, InitialCondition, TimeStepping};
use flocking::flux::FluxScheme;
use flocking::grid::{truncation_radius, Geometry};
use flocking::stationary::{Branch, StationarySettings};
use flocking::ModelParams;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Inclusive, evenly spaced noise grid.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRange {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl NoiseRange {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n).map(|k| self.start + (self.end - self.start) * k as f64 / (n - 1) as f64).collect(),
        }
    }
}

impl std::str::FromStr for NoiseRange {
    type Err = String;

    /// `start:end:count`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, end, count] = parts[..] else {
            return Err(format!("expected start:end:count, got '{s}'"));
        };
        let real = |x: &str| x.parse::<f64>().map_err(|e| format!("'{x}': {e}"));
        Ok(NoiseRange {
            start: real(start)?,
            end: real(end)?,
            count: count.parse().map_err(|e| format!("'{count}': {e}"))?,
        })
    }
}

/// Explicit list first, then a range, then the fallback.
pub fn noise_grid(
    flag_list: &[f64],
    flag_range: Option<NoiseRange>,
    file_list: Option<Vec<f64>>,
    file_range: Option<NoiseRange>,
    fallback: NoiseRange,
) -> Vec<f64> {
    if !flag_list.is_empty() {
        flag_list.to_vec()
    } else if let Some(r) = flag_range {
        r.values()
    } else if let Some(list) = file_list {
        list
    } else {
        file_range.unwrap_or(fallback).values()
    }
}

pub fn params(dim: usize, alpha: f64, noise: f64) -> Result<ModelParams, CliError> {
    ModelParams::new(dim, alpha, noise).map_err(CliError::from)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalFile {
    pub d: Option<Vec<usize>>,
    pub alpha: Option<Vec<f64>>,
    pub settings: Option<StationarySettings>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcationFile {
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub noise: Option<Vec<f64>>,
    pub range: Option<NoiseRange>,
    pub settings: Option<StationarySettings>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HCurveFile {
    pub d: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub noise: Option<Vec<f64>>,
    pub range: Option<NoiseRange>,
    pub settings: Option<StationarySettings>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HuCurveFile {
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub noise: Option<Vec<f64>>,
    pub u_max: Option<f64>,
    pub points: Option<usize>,
    pub settings: Option<StationarySettings>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Line,
    Polar,
    Disk,
}

/// Grid resolution and radius; the radius defaults to the truncation policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridRequest {
    pub kind: Option<GeometryKind>,
    pub cells: Option<usize>,
    pub radial_cells: Option<usize>,
    pub angular_cells: Option<usize>,
    pub radius: Option<f64>,
}

/// Ratio of the boundary value to the peak of the stationary densities.
pub const TRUNCATION_RATIO: f64 = 1e-16;

impl GridRequest {
    pub fn or(self, other: GridRequest) -> GridRequest {
        GridRequest {
            kind: self.kind.or(other.kind),
            cells: self.cells.or(other.cells),
            radial_cells: self.radial_cells.or(other.radial_cells),
            angular_cells: self.angular_cells.or(other.angular_cells),
            radius: self.radius.or(other.radius),
        }
    }

    /// Geometry for `params`, sized for states with order parameter up to `u`.
    pub fn build(&self, params: &ModelParams, u: f64) -> Result<Geometry, CliError> {
        let dim = params.dim();
        let kind = self.kind.unwrap_or(if dim == 1 { GeometryKind::Line } else { GeometryKind::Polar });
        let radius = self.radius.unwrap_or_else(|| truncation_radius(params, u, TRUNCATION_RATIO));
        let geometry = match kind {
            GeometryKind::Line => Geometry::Line { half_width: radius, cells: self.cells.unwrap_or(512) },
            GeometryKind::Polar => Geometry::Polar {
                dim,
                radius,
                radial_cells: self.radial_cells.unwrap_or(64),
                angular_cells: self.angular_cells.unwrap_or(32),
            },
            GeometryKind::Disk => Geometry::Disk {
                radius,
                radial_cells: self.radial_cells.unwrap_or(40),
                angular_cells: self.angular_cells.unwrap_or(32),
            },
        };
        geometry.validate().map_err(CliError::from)?;
        if geometry.dim() != dim {
            return Err(CliError::Config(format!("{kind:?} grid does not represent d = {dim}")));
        }
        Ok(geometry)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumFile {
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub noise: Option<Vec<f64>>,
    pub range: Option<NoiseRange>,
    pub reference: Option<Branch>,
    pub geometry: Option<GeometryKind>,
    pub cells: Option<usize>,
    pub radial_cells: Option<usize>,
    pub angular_cells: Option<usize>,
    pub radius: Option<f64>,
    pub settings: Option<StationarySettings>,
    pub output: Option<PathBuf>,
}

impl SpectrumFile {
    pub fn grid(&self) -> GridRequest {
        GridRequest {
            kind: self.geometry,
            cells: self.cells,
            radial_cells: self.radial_cells,
            angular_cells: self.angular_cells,
            radius: self.radius,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveFile {
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub noise: Option<f64>,
    /// Full geometry; overrides the grid entries below.
    pub geometry: Option<Geometry>,
    pub grid: Option<GeometryKind>,
    pub cells: Option<usize>,
    pub radial_cells: Option<usize>,
    pub angular_cells: Option<usize>,
    pub radius: Option<f64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub time_stepping: Option<TimeStepping>,
    pub flux_scheme: Option<FluxScheme>,
    pub diagnostics_stride: Option<usize>,
    pub fit_window: Option<FitWindow>,
    pub initial: Option<InitialCondition>,
    pub symmetric: Option<bool>,
    pub compare_spectrum: Option<bool>,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub settings: Option<StationarySettings>,
    pub output: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl EvolveFile {
    pub fn grid(&self) -> GridRequest {
        GridRequest {
            kind: self.grid,
            cells: self.cells,
            radial_cells: self.radial_cells,
            angular_cells: self.angular_cells,
            radius: self.radius,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckFile {
    pub checks: Option<Vec<String>>,
    pub settings: Option<StationarySettings>,
    pub output: Option<PathBuf>,
}
