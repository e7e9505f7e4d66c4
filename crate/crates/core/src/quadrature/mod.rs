//! Radial and angular integrals of the Gibbs weights `exp(-(phi(|v|) - u v_1) / D)`.
//!
//! Every integrand is handled in log-scaled form: the exponent is shifted by
//! its sampled maximum before exponentiation and the shift is carried in a
//! [`Scaled`] value, so large `u s / D` never overflows.

pub mod adaptive;

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{confining_potential, sphere_area, ModelParams};
use adaptive::{integrate, AdaptiveOptions};

/// Rule for the outer integration radius `S_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationPolicy {
    /// Smallest admissible radius.
    pub min_radius: f64,
    /// Extra decades (natural log units) below the tail threshold.
    pub margin: f64,
    /// Largest power of `s` any integrand carries.
    pub max_power: u32,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { min_radius: 3.0, margin: 40.0, max_power: 12 }
    }
}

impl TruncationPolicy {
    /// Smallest `s >= min_radius` where `max_power ln s - phi(s)/D + u s/D`
    /// sits `ln(1/abs_tol) + margin` below its running maximum.
    pub fn radius(&self, alpha: f64, noise: f64, u: f64, abs_tol: f64) -> Result<f64> {
        let drop = (1.0 / abs_tol).ln() + self.margin;
        let exponent = |s: f64| {
            let power = if s > 0.0 { self.max_power as f64 * s.ln() } else { 0.0 };
            power - confining_potential(s, alpha) / noise + u * s / noise
        };
        let step = 0.05;
        let mut peak = f64::NEG_INFINITY;
        let mut s = 0.0;
        for _ in 0..1_000_000 {
            let e = exponent(s);
            peak = peak.max(e);
            if s >= self.min_radius && e < peak - drop {
                return Ok(s);
            }
            s += step;
        }
        Err(Error::InvalidConfig(format!(
            "no truncation radius found for alpha = {alpha}, D = {noise}, u = {u}"
        )))
    }
}

/// Accuracy targets for all quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub truncation: TruncationPolicy,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_subdivisions: 2_000,
            truncation: TruncationPolicy::default(),
        }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidConfig("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions < 16 {
            return Err(Error::InvalidConfig("max_subdivisions must be at least 16".into()));
        }
        if !(self.truncation.min_radius > 0.0 && self.truncation.margin >= 0.0) {
            return Err(Error::InvalidConfig("invalid truncation policy".into()));
        }
        Ok(())
    }

    fn radial_options(&self, abs_tol: f64) -> AdaptiveOptions {
        AdaptiveOptions {
            rel_tol: self.rel_tol,
            abs_tol,
            max_subdivisions: self.max_subdivisions,
            initial_pieces: 16,
        }
    }

    fn angular_options(&self) -> AdaptiveOptions {
        AdaptiveOptions {
            rel_tol: 0.1 * self.rel_tol,
            abs_tol: 1e-3 * self.abs_tol,
            max_subdivisions: self.max_subdivisions,
            initial_pieces: 1,
        }
    }
}

/// A number stored as `mantissa * exp(log_scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl Scaled {
    pub fn value(&self) -> f64 {
        self.mantissa * self.log_scale.exp()
    }

    pub fn ln_abs(&self) -> f64 {
        self.mantissa.abs().ln() + self.log_scale
    }

    pub fn signum(&self) -> f64 {
        if self.mantissa == 0.0 {
            0.0
        } else {
            self.mantissa.signum()
        }
    }

    /// `self / other` without leaving log space.
    pub fn ratio(&self, other: &Scaled) -> f64 {
        self.mantissa / other.mantissa * (self.log_scale - other.log_scale).exp()
    }

    pub fn scale(self, factor: f64) -> Scaled {
        Scaled { mantissa: self.mantissa * factor, ..self }
    }
}

/// `int_0^{S_max} prefactor(s) exp(power ln s - phi(s)/D + u s/D) ds`.
fn scaled_radial<F>(
    params: &ModelParams,
    settings: &QuadratureSettings,
    u: f64,
    power: u32,
    mut prefactor: F,
) -> Result<Scaled>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (alpha, noise) = (params.alpha(), params.noise());
    let upper = settings.truncation.radius(alpha, noise, u, settings.abs_tol)?;
    let exponent = |s: f64| {
        let p = if power == 0 { 0.0 } else { power as f64 * s.ln() };
        p - confining_potential(s, alpha) / noise + u * s / noise
    };
    let samples = 512;
    let shift = (1..=samples)
        .map(|k| exponent(upper * k as f64 / samples as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let opts = settings.radial_options(settings.abs_tol * (-shift).exp().min(1.0));
    let integral = integrate(
        |s| {
            let weight = (exponent(s) - shift).exp();
            if weight == 0.0 {
                Ok(0.0)
            } else {
                Ok(prefactor(s)? * weight)
            }
        },
        0.0,
        upper,
        &opts,
    )?;
    Ok(Scaled { mantissa: integral.value, log_scale: shift })
}

/// `exp(-x) int_0^pi cos^b(t) sin^p(t) exp(x cos t) dt` with `p = d - 2 + extra_sine`.
///
/// In one dimension the angular integral degenerates to the two-point sum
/// `exp(x) + (-1)^b exp(-x)`, which is what is returned (scaled).
pub fn angular_moment_scaled(
    dim: usize,
    cos_power: u32,
    extra_sine: u32,
    x: f64,
    settings: &QuadratureSettings,
) -> Result<f64> {
    let odd = cos_power % 2 == 1;
    let fold = |t: f64| if odd { -(-2.0 * t).exp_m1() } else { 1.0 + (-2.0 * t).exp() };
    if dim == 1 {
        if extra_sine != 0 {
            return Err(Error::InvalidParams("transverse weights need d >= 2".into()));
        }
        return Ok(fold(x));
    }
    let sine = (dim - 2) as i32 + extra_sine as i32;
    let integral = integrate(
        |t| {
            let c = t.cos();
            let angular = c.powi(cos_power as i32) * t.sin().powi(sine);
            Ok(angular * (x * (c - 1.0)).exp() * fold(x * c))
        },
        0.0,
        FRAC_PI_2,
        &settings.angular_options(),
    )?;
    Ok(integral.value)
}

/// `|S^{d-2}|`, taken as 1 in one dimension where the angular integral is a two-point sum.
fn transverse_sphere(dim: usize) -> f64 {
    if dim == 1 {
        1.0
    } else {
        sphere_area(dim - 2)
    }
}

/// `int_0^inf s^n exp(-phi(s)/D) ds`.
pub fn j_integral(n: u32, params: &ModelParams, settings: &QuadratureSettings) -> Result<f64> {
    let value = scaled_radial(params, settings, 0.0, n, |_| Ok(1.0))?.value();
    finite(value, "j integral")
}

/// `j_{d+1} - j_{d+3}`, integrated as one fused integrand `s^{d+1} (1 - s^2)`.
pub fn h_function(params: &ModelParams, settings: &QuadratureSettings) -> Result<f64> {
    let power = params.dim() as u32 + 1;
    let value = scaled_radial(params, settings, 0.0, power, |s| Ok(1.0 - s * s))?.value();
    finite(value, "h function")
}

/// `int_0^{pi/2} cos t sin^{d-2} t sinh(s cos t) dt`.
pub fn angular_kernel(s: f64, dim: usize, settings: &QuadratureSettings) -> Result<f64> {
    finite(angular_kernel_scaled(s, dim, settings)? * s.exp(), "angular kernel")
}

/// `exp(-s)` times [`angular_kernel`]; finite for every `s`.
pub fn angular_kernel_scaled(s: f64, dim: usize, settings: &QuadratureSettings) -> Result<f64> {
    check_kernel_args(s, dim)?;
    Ok(0.5 * angular_moment_scaled(dim, 1, 0, s, settings)?)
}

/// Derivative of [`angular_kernel`], differentiated under the integral.
pub fn angular_kernel_derivative(s: f64, dim: usize, settings: &QuadratureSettings) -> Result<f64> {
    check_kernel_args(s, dim)?;
    let scaled = 0.5 * angular_moment_scaled(dim, 2, 0, s, settings)?;
    finite(scaled * s.exp(), "angular kernel derivative")
}

fn check_kernel_args(s: f64, dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidParams("angular kernel needs d >= 2".into()));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidParams(format!("angular kernel argument must be >= 0, got {s}")));
    }
    Ok(())
}

fn check_order(u: f64) -> Result<()> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::InvalidParams(format!("order parameter must be >= 0, got {u}")));
    }
    Ok(())
}

fn finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Self-consistency function `int (v_1 - u) exp(-(phi - u v_1)/D) dv`, in the
/// cancellation-free form `alpha int (1 - |v|^2) v_1 exp(...)`, log-scaled.
pub fn consistency_scaled(u: f64, params: &ModelParams, settings: &QuadratureSettings) -> Result<Scaled> {
    check_order(u)?;
    if u == 0.0 {
        return Ok(Scaled { mantissa: 0.0, log_scale: 0.0 });
    }
    let (dim, noise, alpha) = (params.dim(), params.noise(), params.alpha());
    let radial = scaled_radial(params, settings, u, dim as u32, |s| {
        Ok((1.0 - s * s) * angular_moment_scaled(dim, 1, 0, u * s / noise, settings)?)
    })?;
    Ok(radial.scale(alpha * transverse_sphere(dim)))
}

/// The self-consistency function; zero exactly at stationary order parameters.
pub fn consistency(u: f64, params: &ModelParams, settings: &QuadratureSettings) -> Result<f64> {
    finite(consistency_scaled(u, params, settings)?.value(), "consistency function")
}

/// The self-consistency function from its defining integral
/// `int (v_1 - u) exp(-(phi - u v_1)/D) dv`; used as a cross-check.
pub fn consistency_defining_form(
    u: f64,
    params: &ModelParams,
    settings: &QuadratureSettings,
) -> Result<f64> {
    check_order(u)?;
    let (dim, noise) = (params.dim(), params.noise());
    let radial = scaled_radial(params, settings, u, dim as u32 - 1, |s| {
        let x = u * s / noise;
        let odd = angular_moment_scaled(dim, 1, 0, x, settings)?;
        let even = angular_moment_scaled(dim, 0, 0, x, settings)?;
        Ok(s * odd - u * even)
    })?;
    finite(radial.scale(transverse_sphere(dim)).value(), "consistency function")
}

/// Derivative of the self-consistency function in `u`.
pub fn consistency_derivative(u: f64, params: &ModelParams, settings: &QuadratureSettings) -> Result<f64> {
    check_order(u)?;
    let (dim, noise, alpha) = (params.dim(), params.noise(), params.alpha());
    let radial = scaled_radial(params, settings, u, dim as u32 + 1, |s| {
        Ok((1.0 - s * s) * angular_moment_scaled(dim, 2, 0, u * s / noise, settings)?)
    })?;
    let value = radial.scale(alpha * transverse_sphere(dim) / noise).value();
    finite(value, "consistency derivative")
}

/// Polynomial weight `|v|^speed v_1^axis (v_2^2)^[transverse]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MomentWeight {
    pub speed: u32,
    pub axis: u32,
    pub transverse: bool,
}

impl MomentWeight {
    pub const ONE: MomentWeight = MomentWeight { speed: 0, axis: 0, transverse: false };

    pub fn speed(power: u32) -> Self {
        Self { speed: power, ..Self::ONE }
    }

    pub fn axis(power: u32) -> Self {
        Self { axis: power, ..Self::ONE }
    }

    /// `v_i^2` for any fixed `i >= 2`.
    pub fn transverse_square() -> Self {
        Self { transverse: true, ..Self::ONE }
    }
}

/// Unnormalized `int w(v) exp(-(phi - u v_1)/D) dv` without the `|S^{d-2}|` factor.
fn weighted_partition(
    weight: MomentWeight,
    u: f64,
    params: &ModelParams,
    settings: &QuadratureSettings,
) -> Result<Scaled> {
    let (dim, noise) = (params.dim(), params.noise());
    let extra_sine = if weight.transverse { 2 } else { 0 };
    let power = dim as u32 - 1 + weight.speed + weight.axis + extra_sine;
    let radial = scaled_radial(params, settings, u, power, |s| {
        angular_moment_scaled(dim, weight.axis, extra_sine, u * s / noise, settings)
    })?;
    if weight.transverse {
        Ok(radial.scale(1.0 / (dim as f64 - 1.0)))
    } else {
        Ok(radial)
    }
}

/// `int exp(-(phi(v) - u v_1)/D) dv`, log-scaled.
pub fn partition_scaled(u: f64, params: &ModelParams, settings: &QuadratureSettings) -> Result<Scaled> {
    check_order(u)?;
    let z = weighted_partition(MomentWeight::ONE, u, params, settings)?;
    Ok(z.scale(transverse_sphere(params.dim())))
}

/// `ln int exp(-(phi(v) - u v_1)/D) dv`.
pub fn log_partition(u: f64, params: &ModelParams, settings: &QuadratureSettings) -> Result<f64> {
    finite(partition_scaled(u, params, settings)?.ln_abs(), "log partition")
}

/// `H(u) / Z(u)`, which equals `<v_1>_u - u` and never overflows.
pub fn normalized_consistency(u: f64, params: &ModelParams, settings: &QuadratureSettings) -> Result<f64> {
    let h = consistency_scaled(u, params, settings)?;
    if h.mantissa == 0.0 {
        return Ok(0.0);
    }
    finite(h.ratio(&partition_scaled(u, params, settings)?), "normalized consistency")
}

/// `int w(v) f_u(v) dv` for the normalized stationary density with mean axis `e_1`.
pub fn moment_of_stationary(
    weight: MomentWeight,
    u: f64,
    params: &ModelParams,
    settings: &QuadratureSettings,
) -> Result<f64> {
    check_order(u)?;
    if weight.transverse && params.dim() < 2 {
        return Err(Error::InvalidParams("transverse moments need d >= 2".into()));
    }
    if weight == MomentWeight::ONE {
        return Ok(1.0);
    }
    let numerator = weighted_partition(weight, u, params, settings)?;
    let denominator = weighted_partition(MomentWeight::ONE, u, params, settings)?;
    finite(numerator.ratio(&denominator), "stationary moment")
}
