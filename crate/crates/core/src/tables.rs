//! Sweeps behind the CSV outputs and their writers.
//!
//! Floats are written with 17 significant digits so that identical inputs give
//! byte-identical files; missing values are empty fields.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::checks::CheckReport;
use crate::error::{Error, Result};
use crate::evolution::EvolutionTrace;
use crate::model::ModelParams;
use crate::quadrature::{consistency, h_function, normalized_consistency};
use crate::spectrum::SpectralReport;
use crate::stationary::{critical_noise, BifurcationPoint, StationarySettings};

pub const CRITICAL_HEADER: [&str; 6] = ["d", "alpha", "D_star", "residual", "lower_bound", "upper_bound"];
pub const BIFURCATION_HEADER: [&str; 6] = ["D", "branch", "u", "residual", "kappa", "eta"];
pub const H_CURVE_HEADER: [&str; 4] = ["d", "alpha", "D", "h"];
pub const CONSISTENCY_HEADER: [&str; 6] = ["d", "alpha", "D", "u", "H", "H_over_Z"];
pub const SPECTRUM_HEADER: [&str; 18] = [
    "d",
    "alpha",
    "D",
    "reference",
    "geometry",
    "cells",
    "order",
    "lambda_poincare",
    "lambda_error",
    "c_paper",
    "c_opt",
    "c_axis_restricted",
    "kappa",
    "c_paper_polarized",
    "predicted_rate",
    "excluded_modes",
    "selfadjoint_residual",
    "q2_identity_residual",
];
pub const CHECK_HEADER: [&str; 6] = ["check", "passed", "cases", "worst", "tolerance", "failures"];
/// Leading columns of an evolution trace; one `relative_entropy_<name>` column
/// per candidate and a final `gap` column follow.
pub const TRACE_HEADER: [&str; 6] =
    ["time", "mass", "mean_velocity_1", "mean_velocity_2", "free_energy", "fisher_information"];

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidConfig(format!("cannot write CSV: {e}"))
}

/// Writes a header and rows as RFC 4180 CSV.
pub fn write_csv<W, H, R>(out: W, header: &[H], rows: R) -> Result<()>
where
    W: Write,
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header.iter().map(|h| h.as_ref())).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::InvalidConfig(format!("cannot write CSV: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalRow {
    pub dim: usize,
    pub alpha: f64,
    pub critical: f64,
    /// `h_d` at the returned root.
    pub residual: f64,
}

impl CriticalRow {
    pub fn compute(dim: usize, alpha: f64, settings: &StationarySettings) -> Result<Self> {
        let critical = critical_noise(dim, alpha, settings)?;
        let residual = h_function(&ModelParams::new(dim, alpha, critical)?, &settings.quadrature)?;
        Ok(CriticalRow { dim, alpha, critical, residual })
    }

    pub fn fields(&self) -> Vec<String> {
        let d = self.dim as f64;
        vec![
            self.dim.to_string(),
            num(self.alpha),
            num(self.critical),
            num(self.residual),
            num(1.0 / (d + 2.0)),
            num(1.0 / d),
        ]
    }
}

/// Critical noise for each `(d, alpha)` pair, in input order.
pub fn critical_table(pairs: &[(usize, f64)], settings: &StationarySettings) -> Result<Vec<CriticalRow>> {
    pairs.par_iter().map(|&(d, a)| CriticalRow::compute(d, a, settings)).collect()
}

pub fn bifurcation_fields(p: &BifurcationPoint) -> Vec<String> {
    vec![num(p.noise), p.branch.as_str().into(), num(p.u), num(p.residual), opt(p.kappa), opt(p.eta)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HCurveRow {
    pub dim: usize,
    pub alpha: f64,
    pub noise: f64,
    pub h: f64,
}

impl HCurveRow {
    pub fn fields(&self) -> Vec<String> {
        vec![self.dim.to_string(), num(self.alpha), num(self.noise), num(self.h)]
    }
}

/// `h_d(D)` over the noise grid for each dimension; rows grouped by dimension.
pub fn h_curve(dims: &[usize], alpha: f64, grid: &[f64], settings: &StationarySettings) -> Result<Vec<HCurveRow>> {
    let jobs: Vec<(usize, f64)> = dims.iter().flat_map(|&d| grid.iter().map(move |&n| (d, n))).collect();
    jobs.par_iter()
        .map(|&(dim, noise)| {
            let h = h_function(&ModelParams::new(dim, alpha, noise)?, &settings.quadrature)?;
            Ok(HCurveRow { dim, alpha, noise, h })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub params: ModelParams,
    pub u: f64,
    /// Self-consistency function.
    pub value: f64,
    /// The same divided by the partition function, i.e. `<v_1>_u - u`.
    pub normalized: f64,
}

impl ConsistencyRow {
    pub fn fields(&self) -> Vec<String> {
        let p = &self.params;
        vec![
            p.dim().to_string(),
            num(p.alpha()),
            num(p.noise()),
            num(self.u),
            num(self.value),
            num(self.normalized),
        ]
    }
}

/// Self-consistency function over `u_grid` for each noise level.
pub fn consistency_curve(
    dim: usize,
    alpha: f64,
    noises: &[f64],
    u_grid: &[f64],
    settings: &StationarySettings,
) -> Result<Vec<ConsistencyRow>> {
    let jobs: Vec<(f64, f64)> = noises.iter().flat_map(|&n| u_grid.iter().map(move |&u| (n, u))).collect();
    jobs.par_iter()
        .map(|&(noise, u)| {
            let params = ModelParams::new(dim, alpha, noise)?;
            let q = &settings.quadrature;
            Ok(ConsistencyRow {
                params,
                u,
                value: consistency(u, &params, q)?,
                normalized: normalized_consistency(u, &params, q)?,
            })
        })
        .collect()
}

pub fn spectrum_fields(r: &SpectralReport) -> Vec<String> {
    let p = &r.params;
    vec![
        p.dim().to_string(),
        num(p.alpha()),
        num(p.noise()),
        r.reference.as_str().into(),
        geometry_kind(&r.geometry).into(),
        r.cells.to_string(),
        num(r.order),
        num(r.lambda_poincare),
        opt(r.lambda_error),
        num(r.c_paper),
        num(r.c_coercive_opt),
        num(r.c_axis_restricted),
        opt(r.kappa),
        opt(r.c_paper_polarized),
        num(r.predicted_rate),
        r.excluded_modes.to_string(),
        num(r.selfadjoint_residual),
        num(r.q2_identity_residual),
    ]
}

fn geometry_kind(g: &crate::grid::Geometry) -> &'static str {
    match g {
        crate::grid::Geometry::Line { .. } => "line",
        crate::grid::Geometry::Polar { .. } => "polar",
        crate::grid::Geometry::Disk { .. } => "disk",
    }
}

pub fn check_fields(r: &CheckReport) -> Vec<String> {
    vec![
        r.check.name().into(),
        r.passed().to_string(),
        r.cases.to_string(),
        opt(r.worst),
        opt(r.tolerance),
        r.failures.len().to_string(),
    ]
}

pub fn trace_header(trace: &EvolutionTrace) -> Vec<String> {
    TRACE_HEADER
        .iter()
        .map(|s| s.to_string())
        .chain(trace.candidate_names.iter().map(|n| format!("relative_entropy_{n}")))
        .chain(std::iter::once("gap".to_string()))
        .collect()
}

pub fn trace_rows(trace: &EvolutionTrace) -> Vec<Vec<String>> {
    trace
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                num(r.time),
                num(r.mass),
                num(r.mean_velocity[0]),
                num(r.mean_velocity[1]),
                num(r.free_energy),
                num(r.fisher_information),
            ];
            row.extend(r.entropy_to_candidates.iter().copied().map(num));
            row.push(opt(trace.limit.map(|k| r.entropy_to_candidates[k])));
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.5), "-2.5000000000000000e0");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn empty_rows_give_header_only() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &BIFURCATION_HEADER, Vec::<Vec<String>>::new()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "D,branch,u,residual,kappa,eta\n");
    }

    #[test]
    fn critical_row_has_bounds() {
        let row = CriticalRow::compute(1, 2.0, &StationarySettings::default()).unwrap();
        let f = row.fields();
        assert_eq!(f.len(), CRITICAL_HEADER.len());
        assert!((f[2].parse::<f64>().unwrap() - 0.529).abs() < 0.002);
        assert_eq!(f[4].parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
