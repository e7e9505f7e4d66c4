//! Phase transition, polarized branch and stationary states.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{confining_potential, ModelParams};
use crate::quadrature::{
    self, h_function, j_integral, moment_of_stationary, normalized_consistency, MomentWeight,
    QuadratureSettings,
};
use crate::roots::brent;
use crate::special::{bessel_i_scaled, upper_incomplete_gamma};

/// Tolerances for root searches on top of the quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationarySettings {
    pub quadrature: QuadratureSettings,
    /// Width of the final bracket on the critical noise.
    pub root_tol: f64,
    /// Largest accepted `|<v_1>_u - u|` for a polarized state.
    pub residual_tol: f64,
    /// Width of the final bracket on the order parameter.
    pub order_tol: f64,
}

impl Default for StationarySettings {
    fn default() -> Self {
        Self {
            quadrature: QuadratureSettings::default(),
            root_tol: 1e-8,
            residual_tol: 1e-8,
            order_tol: 1e-12,
        }
    }
}

impl StationarySettings {
    pub fn validate(&self) -> Result<()> {
        self.quadrature.validate()?;
        if !(self.root_tol > 0.0 && self.residual_tol > 0.0 && self.order_tol > 0.0) {
            return Err(Error::InvalidConfig("root tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// The noise `D*` where `h_d` changes sign, bracketed in `(1/(d+2), 1/d)`.
pub fn critical_noise(dim: usize, alpha: f64, settings: &StationarySettings) -> Result<f64> {
    ModelParams::new(dim, alpha, 1.0)?;
    let lower = 1.0 / (dim as f64 + 2.0);
    let upper = 1.0 / dim as f64;
    brent(
        |noise| h_function(&ModelParams::new(dim, alpha, noise)?, &settings.quadrature),
        lower,
        upper,
        settings.root_tol,
        "h_d(D)",
    )
}

/// Whether `params` lies strictly below the critical noise, decided by the sign of `h_d`.
pub fn is_subcritical(params: &ModelParams, settings: &StationarySettings) -> Result<bool> {
    Ok(h_function(params, &settings.quadrature)? > 0.0)
}

/// The positive root of the self-consistency function, or `None` at and above `D*`.
///
/// Within `order_tol` of the threshold the polarized root cannot be separated
/// from zero and `None` is returned as well.
pub fn order_parameter(params: &ModelParams, settings: &StationarySettings) -> Result<Option<f64>> {
    if !is_subcritical(params, settings)? {
        return Ok(None);
    }
    let q = &settings.quadrature;
    let gap = |u: f64| normalized_consistency(u, params, q);
    let lower = settings.order_tol;
    if gap(lower)? <= 0.0 {
        return Ok(None);
    }
    let mut upper = 1.0;
    while gap(upper)? >= 0.0 {
        upper *= 2.0;
        if upper > 1e6 {
            return Err(Error::BracketFailure { what: "H(u)", lower, upper });
        }
    }
    let u = brent(gap, lower, upper, settings.order_tol, "H(u)")?;
    Ok(Some(u))
}

/// Stationary density `f_u(v) = exp(-(phi(|v|) - u v_1)/D) / Z(u)` with moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryState {
    pub params: ModelParams,
    /// Order parameter; the mean velocity is `u e_1`.
    pub u: f64,
    /// `ln Z(u)`.
    pub log_normalization: f64,
    /// `|<v_1>_u - u|` at construction.
    pub residual: f64,
    #[serde(skip)]
    moments: BTreeMap<MomentWeight, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Isotropic,
    Polarized,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Isotropic => "isotropic",
            Branch::Polarized => "polarized",
        }
    }
}

/// Builds the stationary state with order parameter `u`, rejecting values of
/// `u > 0` that are not roots of the self-consistency function.
pub fn make_stationary(
    params: &ModelParams,
    u: f64,
    settings: &StationarySettings,
) -> Result<StationaryState> {
    let q = &settings.quadrature;
    let residual = if u == 0.0 { 0.0 } else { normalized_consistency(u, params, q)?.abs() };
    if residual > settings.residual_tol {
        return Err(Error::NotStationary { u, residual, tolerance: settings.residual_tol });
    }
    let log_normalization = quadrature::log_partition(u, params, q)?;
    let mut weights = vec![
        MomentWeight::speed(2),
        MomentWeight::speed(4),
        MomentWeight::axis(1),
        MomentWeight::axis(2),
    ];
    if params.dim() >= 2 {
        weights.push(MomentWeight::transverse_square());
    }
    let mut moments = BTreeMap::new();
    moments.insert(MomentWeight::ONE, 1.0);
    for w in weights {
        moments.insert(w, moment_of_stationary(w, u, params, q)?);
    }
    Ok(StationaryState { params: *params, u, log_normalization, residual, moments })
}

/// The isotropic state `f_0`, stationary for every noise level.
pub fn isotropic_state(params: &ModelParams, settings: &StationarySettings) -> Result<StationaryState> {
    make_stationary(params, 0.0, settings)
}

/// The polarized state `f_{u(D)}`, or `None` at and above `D*`.
pub fn polarized_state(
    params: &ModelParams,
    settings: &StationarySettings,
) -> Result<Option<StationaryState>> {
    order_parameter(params, settings)?
        .map(|u| make_stationary(params, u, settings))
        .transpose()
}

impl StationaryState {
    pub fn branch(&self) -> Branch {
        if self.u > 0.0 {
            Branch::Polarized
        } else {
            Branch::Isotropic
        }
    }

    /// Cached moment, or a fresh quadrature when the weight was not cached.
    pub fn moment(&self, weight: MomentWeight, settings: &QuadratureSettings) -> Result<f64> {
        match self.moments.get(&weight) {
            Some(&m) => Ok(m),
            None => moment_of_stationary(weight, self.u, &self.params, settings),
        }
    }

    pub fn cached_moments(&self) -> &BTreeMap<MomentWeight, f64> {
        &self.moments
    }

    /// Mean velocity along `e_1` computed by quadrature.
    pub fn mean_velocity(&self) -> f64 {
        self.moments[&MomentWeight::axis(1)]
    }

    /// `ln f_u` at a velocity with speed `s` and axial component `v_1`.
    pub fn log_density(&self, speed: f64, axial: f64) -> f64 {
        let noise = self.params.noise();
        -(confining_potential(speed, self.params.alpha()) - self.u * axial) / noise
            - self.log_normalization
    }

    /// `int |(v - u e_1) . e_1|^2 f_u dv`.
    pub fn longitudinal_variance(&self) -> f64 {
        let second = self.moments[&MomentWeight::axis(2)];
        second - 2.0 * self.u * self.mean_velocity() + self.u * self.u
    }

    /// Exact free energy `-D ln Z(u) + u^2 / 2` of the stationary state.
    pub fn free_energy(&self) -> f64 {
        -self.params.noise() * self.log_normalization + 0.5 * self.u * self.u
    }
}

fn critical_domain_error(
    params: &ModelParams,
    settings: &StationarySettings,
    what: &'static str,
    requirement: &'static str,
) -> Error {
    let critical = critical_noise(params.dim(), params.alpha(), settings).unwrap_or(f64::NAN);
    Error::Domain { what, requirement, noise: params.noise(), critical }
}

/// Longitudinal variance of the polarized state divided by `D`; lies in `(0, 1)`.
pub fn kappa(params: &ModelParams, settings: &StationarySettings) -> Result<f64> {
    match polarized_state(params, settings)? {
        Some(state) => Ok(kappa_of(&state)),
        None => Err(critical_domain_error(params, settings, "kappa", "D < D*")),
    }
}

/// [`kappa`] for an already constructed polarized state.
pub fn kappa_of(state: &StationaryState) -> f64 {
    state.longitudinal_variance() / state.params.noise()
}

/// Lower constant of the norm equivalence on the isotropic state above `D*`:
/// `alpha C |h_d(D)|` with `C = j_{d+1} / (d^2 j_{d-1}^2)`.
///
/// The constant `C` is the one for which `alpha C |h_d|` is exactly the
/// quadratic form of the free energy evaluated on `g = v_1`.
pub fn eta(params: &ModelParams, settings: &StationarySettings) -> Result<f64> {
    let q = &settings.quadrature;
    let h = h_function(params, q)?;
    if h >= 0.0 {
        return Err(critical_domain_error(params, settings, "eta", "D > D*"));
    }
    let dim = params.dim() as u32;
    let upper = j_integral(dim + 1, params, q)?;
    let lower = j_integral(dim - 1, params, q)?;
    let d = dim as f64;
    Ok(params.alpha() * upper / (d * d * lower * lower) * h.abs())
}

/// Sharp constant `D - <v_1^2>_0` in `Q_1[g] >= c int g^2 f_0` for mean-zero `g`.
pub fn eta_sharp(params: &ModelParams, settings: &StationarySettings) -> Result<f64> {
    let q = &settings.quadrature;
    if h_function(params, q)? >= 0.0 {
        return Err(critical_domain_error(params, settings, "eta", "D > D*"));
    }
    Ok(params.noise() - moment_of_stationary(MomentWeight::axis(2), 0.0, params, q)?)
}

/// One stationary solution at a given noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BifurcationPoint {
    pub noise: f64,
    pub u: f64,
    pub branch: Branch,
    pub residual: f64,
    pub kappa: Option<f64>,
    pub eta: Option<f64>,
}

/// Stationary solutions along a noise sweep; failed grid points are reported
/// separately and do not stop the sweep.
#[derive(Debug, Clone, Default)]
pub struct BifurcationCurve {
    pub points: Vec<BifurcationPoint>,
    pub failures: Vec<(f64, Error)>,
}

fn points_at(dim: usize, alpha: f64, noise: f64, settings: &StationarySettings) -> Result<Vec<BifurcationPoint>> {
    let params = ModelParams::new(dim, alpha, noise)?;
    let subcritical = is_subcritical(&params, settings)?;
    let eta = if subcritical { None } else { eta(&params, settings).ok() };
    let mut points = vec![BifurcationPoint {
        noise,
        u: 0.0,
        branch: Branch::Isotropic,
        residual: 0.0,
        kappa: None,
        eta,
    }];
    if subcritical {
        if let Some(state) = polarized_state(&params, settings)? {
            points.push(BifurcationPoint {
                noise,
                u: state.u,
                branch: Branch::Polarized,
                residual: state.residual,
                kappa: Some(kappa_of(&state)),
                eta: None,
            });
        }
    }
    Ok(points)
}

/// Isotropic and (below `D*`) polarized solutions for each noise in `grid`.
///
/// Grid points are processed in parallel; output order follows `grid`.
pub fn bifurcation_curve(
    dim: usize,
    alpha: f64,
    grid: &[f64],
    settings: &StationarySettings,
) -> Result<BifurcationCurve> {
    ModelParams::new(dim, alpha, 1.0)?;
    if grid.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidConfig("noise grid must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("noise grid must be sorted".into()));
    }
    let results: Vec<_> = grid
        .par_iter()
        .map(|&noise| (noise, points_at(dim, alpha, noise, settings)))
        .collect();
    let mut curve = BifurcationCurve::default();
    for (noise, result) in results {
        match result {
            Ok(points) => curve.points.extend(points),
            Err(e) => curve.failures.push((noise, e)),
        }
    }
    Ok(curve)
}

/// Closed-form characterizations of the critical noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecialCase {
    /// `d = 1`, `alpha = 2`: modified Bessel functions of orders -1/4 .. 5/4.
    D1a2,
    /// `d = 2`, `alpha = 2`: upper incomplete Gamma functions.
    D2a2,
    /// `d = 2`, `alpha = 4`: upper incomplete Gamma functions.
    D2a4,
}

impl SpecialCase {
    pub const ALL: [SpecialCase; 3] = [SpecialCase::D1a2, SpecialCase::D2a2, SpecialCase::D2a4];

    pub fn dim_alpha(&self) -> (usize, f64) {
        match self {
            SpecialCase::D1a2 => (1, 2.0),
            SpecialCase::D2a2 => (2, 2.0),
            SpecialCase::D2a4 => (2, 4.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpecialCase::D1a2 => "d1a2",
            SpecialCase::D2a2 => "d2a2",
            SpecialCase::D2a4 => "d2a4",
        }
    }

    /// Left-hand side of the transcendental equation whose root is `D*`.
    pub fn equation(&self, noise: f64) -> Result<f64> {
        let sqrt_pi = PI.sqrt();
        match self {
            SpecialCase::D1a2 => {
                // common factor exp(z) dropped
                let z = 1.0 / (16.0 * noise);
                Ok((1.0 - 4.0 * noise) * bessel_i_scaled(-0.25, z)?
                    + (1.0 + 4.0 * noise) * bessel_i_scaled(0.25, z)?
                    + bessel_i_scaled(0.75, z)?
                    + bessel_i_scaled(1.25, z)?)
            }
            SpecialCase::D2a2 => {
                let z = 1.0 / (8.0 * noise);
                Ok((8.0 * upper_incomplete_gamma(1.5, z)? - 8.0 * sqrt_pi) * noise
                    - upper_incomplete_gamma(0.5, z)?
                    + 2.0 * sqrt_pi)
            }
            SpecialCase::D2a4 => {
                let z = 9.0 / (16.0 * noise);
                Ok((16.0 * upper_incomplete_gamma(1.5, z)? - 16.0 * sqrt_pi) * noise
                    - 8.0 * upper_incomplete_gamma(1.0, z)? * noise.sqrt()
                    + 6.0 * sqrt_pi
                    - 3.0 * upper_incomplete_gamma(0.5, z)?)
            }
        }
    }
}

impl std::str::FromStr for SpecialCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpecialCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown special-function case {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpecialFunctionReport {
    pub case: SpecialCase,
    pub closed_form_root: f64,
    pub quadrature_root: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Solves a closed-form equation for `D*` and compares with the quadrature root.
pub fn special_function_check(case: SpecialCase, settings: &StationarySettings) -> Result<SpecialFunctionReport> {
    let (dim, alpha) = case.dim_alpha();
    let lower = 1.0 / (dim as f64 + 2.0);
    let upper = 1.0 / dim as f64;
    let closed_form_root = brent(|d| case.equation(d), lower, upper, 1e-12, "special-function equation")?;
    let quadrature_root = critical_noise(dim, alpha, settings)?;
    let deviation = (closed_form_root - quadrature_root).abs();
    let tolerance = 1e-4;
    Ok(SpecialFunctionReport {
        case,
        closed_form_root,
        quadrature_root,
        deviation,
        tolerance,
        passed: deviation <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalEntry {
    pub dim: usize,
    pub alpha: f64,
    pub critical: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CriticalSuiteReport {
    pub entries: Vec<CriticalEntry>,
    pub violations: Vec<String>,
}

impl CriticalSuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the bounds `1/(d+2) < D* < 1/d`, decrease in `d` and increase in
/// `alpha` over the given grids (each sorted ascending on input).
pub fn dstar_qualitative_suite(
    alphas: &[f64],
    dims: std::ops::RangeInclusive<usize>,
    settings: &StationarySettings,
) -> CriticalSuiteReport {
    let mut alphas = alphas.to_vec();
    alphas.sort_by(f64::total_cmp);
    let pairs: Vec<(usize, f64)> = dims.flat_map(|d| alphas.iter().map(move |&a| (d, a))).collect();
    let results: Vec<_> = pairs
        .par_iter()
        .map(|&(d, a)| (d, a, critical_noise(d, a, settings)))
        .collect();
    let mut report = CriticalSuiteReport::default();
    for (dim, alpha, result) in results {
        match result {
            Ok(critical) => report.entries.push(CriticalEntry { dim, alpha, critical }),
            Err(e) => report.violations.push(format!("d={dim} alpha={alpha}: {e}")),
        }
    }
    let lookup = |d: usize, a: f64| {
        report.entries.iter().find(|e| e.dim == d && e.alpha == a).map(|e| e.critical)
    };
    let mut violations = Vec::new();
    for e in &report.entries {
        let (lo, hi) = (1.0 / (e.dim as f64 + 2.0), 1.0 / e.dim as f64);
        if !(lo < e.critical && e.critical < hi) {
            violations.push(format!(
                "d={} alpha={}: D* = {} outside ({lo}, {hi})",
                e.dim, e.alpha, e.critical
            ));
        }
        if let Some(next) = lookup(e.dim + 1, e.alpha) {
            if next >= e.critical {
                violations.push(format!(
                    "alpha={}: D*(d={}) = {next} not below D*(d={}) = {}",
                    e.alpha, e.dim + 1, e.dim, e.critical
                ));
            }
        }
    }
    for w in alphas.windows(2) {
        for e in report.entries.iter().filter(|e| e.alpha == w[0]) {
            if let Some(next) = lookup(e.dim, w[1]) {
                if next <= e.critical {
                    violations.push(format!(
                        "d={}: D*(alpha={}) = {next} not above D*(alpha={}) = {}",
                        e.dim, w[1], w[0], e.critical
                    ));
                }
            }
        }
    }
    report.violations.extend(violations);
    report
}
