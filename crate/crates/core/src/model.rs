//! Model parameters and the self-propulsion potential.
//!
//! The potential is written as a function of the speed `s = |v|`; the
//! d-dimensional potential is the same profile evaluated at `|v|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;

/// Dimension `d`, self-propulsion strength `alpha` and noise intensity `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ModelParams {
    dim: usize,
    alpha: f64,
    noise: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    dim: usize,
    alpha: f64,
    noise: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.dim, raw.alpha, raw.noise)
    }
}

impl ModelParams {
    pub fn new(dim: usize, alpha: f64, noise: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("dimension must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParams(format!("alpha must be positive, got {alpha}")));
        }
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::InvalidParams(format!("noise must be positive, got {noise}")));
        }
        Ok(Self { dim, alpha, noise })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Same model at a different noise level.
    pub fn with_noise(&self, noise: f64) -> Result<Self> {
        Self::new(self.dim, self.alpha, noise)
    }

    pub fn potential(&self, s: f64) -> f64 {
        confining_potential(s, self.alpha)
    }
}

/// `(alpha/4) s^4 + ((1 - alpha)/2) s^2`.
pub fn confining_potential(s: f64, alpha: f64) -> f64 {
    let s2 = s * s;
    0.25 * alpha * s2 * s2 + 0.5 * (1.0 - alpha) * s2
}

/// Radial derivative `alpha s^3 + (1 - alpha) s`.
pub fn confining_potential_derivative(s: f64, alpha: f64) -> f64 {
    alpha * s * s * s + (1.0 - alpha) * s
}

/// Surface area of the unit sphere `S^n` in `R^{n+1}`, with `|S^0| = 2`.
pub fn sphere_area(n: usize) -> f64 {
    let half = 0.5 * (n as f64 + 1.0);
    2.0 * std::f64::consts::PI.powf(half) / special::gamma(half)
}
