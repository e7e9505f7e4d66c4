//! Two-point fluxes for the drift-diffusion operator `div(D grad f + f grad psi)`.

use serde::{Deserialize, Serialize};

/// Bernoulli function `x / (exp(x) - 1)`, with `B(0) = 1`.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 - 0.5 * x + x * x / 12.0
    } else if x > 700.0 {
        x * (-x).exp()
    } else {
        x / x.exp_m1()
    }
}

/// Logarithmic mean `(a - b) / (ln a - ln b)`, with `L(a, a) = a`.
pub fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let r = b / a - 1.0;
    if r.abs() < 1e-4 {
        // series in r = b/a - 1
        a * (1.0 + r * (0.5 - r * (1.0 / 12.0 - r / 24.0)))
    } else {
        (a - b) / (a.ln() - b.ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Exponential fitting (Scharfetter–Gummel); exact on local Gibbs states.
    #[default]
    GibbsWeighted,
    /// Central differencing of the drift; neither positivity nor
    /// equilibria are preserved exactly.
    Centered,
}

/// Coefficients `(a, b)` of the flux `F = a f_i - b f_j` leaving cell `i`
/// through a face with `coupling` (area over distance), where
/// `jump = (psi_j - psi_i) / D`.
pub fn face_coefficients(scheme: FluxScheme, coupling: f64, noise: f64, jump: f64) -> (f64, f64) {
    let scale = coupling * noise;
    match scheme {
        FluxScheme::GibbsWeighted => (scale * bernoulli(jump), scale * bernoulli(-jump)),
        FluxScheme::Centered => (scale * (1.0 - 0.5 * jump), scale * (1.0 + 0.5 * jump)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_branches_are_continuous() {
        for x in [1e-5f64, -1e-5, 700.0] {
            let below = bernoulli(x - 1e-12);
            let above = bernoulli(x + 1e-12);
            assert!((below - above).abs() < 1e-10 * below.abs());
        }
        assert_eq!(bernoulli(0.0), 1.0);
        // B(-x) = B(x) + x
        for x in [0.3, 2.0, 15.0] {
            assert!((bernoulli(-x) - bernoulli(x) - x).abs() < 1e-13);
        }
    }

    #[test]
    fn log_mean_limits() {
        assert_eq!(log_mean(2.0, 2.0), 2.0);
        assert!((log_mean(1.0, 1.0 + 1e-5) - (1.0 + 0.5e-5 - 1e-10 / 12.0)).abs() < 1e-15);
        assert!((log_mean(1.0, std::f64::consts::E) - (std::f64::consts::E - 1.0)).abs() < 1e-14);
        assert_eq!(log_mean(0.0, 1.0), 0.0);
    }

    #[test]
    fn gibbs_weighted_flux_vanishes_on_local_equilibrium() {
        let (noise, psi_i, psi_j) = (0.4, 0.3, 1.1);
        let jump = (psi_j - psi_i) / noise;
        let (a, b) = face_coefficients(FluxScheme::GibbsWeighted, 2.0, noise, jump);
        let (fi, fj) = ((-psi_i / noise).exp(), (-psi_j / noise).exp());
        assert!((a * fi - b * fj).abs() < 1e-15);
    }
}
