//! Free energy, relative entropy, Fisher information and their quadratic
//! expansions on grid densities.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flux::{bernoulli, log_mean};
use crate::grid::{GridDensity, Mesh, Velocity};
use crate::model::{confining_potential, ModelParams};
use crate::stationary::StationaryState;

/// Cells below this value are left out of logarithmic differences.
pub const UNDERFLOW: f64 = 1e-300;

/// A cell that vanishes next to one above this value is a hole in the bulk.
const HOLE_THRESHOLD: f64 = 1e-100;

/// Tolerance on `sum mu g f` for perturbations fed to the quadratic forms.
pub const MEAN_ZERO_TOLERANCE: f64 = 1e-10;

fn dot(a: Velocity, b: Velocity) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm_sq(a: Velocity) -> f64 {
    dot(a, a)
}

fn entropy_term(f: f64) -> f64 {
    if f > 0.0 {
        f * f.ln()
    } else {
        0.0
    }
}

/// `u_f`; errors on densities without mass.
pub fn mean_velocity(f: &GridDensity) -> Result<Velocity> {
    let mass = f.mass();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(f.mean_velocity())
}

/// `D int f ln f + int f phi - |u_f|^2 / 2`, with `0 ln 0 = 0`.
pub fn free_energy(f: &GridDensity, params: &ModelParams) -> Result<f64> {
    let mesh = f.mesh();
    mesh.check_params(params)?;
    let u = mean_velocity(f)?;
    let mut entropy = 0.0;
    let mut potential = 0.0;
    for ((m, v), s) in mesh.measures().iter().zip(f.values()).zip(mesh.speeds()) {
        entropy += m * entropy_term(*v);
        potential += m * v * confining_potential(*s, params.alpha());
    }
    Ok(params.noise() * entropy + potential - 0.5 * norm_sq(u))
}

/// The free energy as `D int f ln f + int |v - u_f|^2 f / 2 + int (alpha |v|^4/4 - alpha |v|^2/2) f`.
///
/// Equal to [`free_energy`] for unit-mass densities; the sign of the
/// `|v|^2` term in the quartic part is what makes the two agree.
pub fn free_energy_completed_square(f: &GridDensity, params: &ModelParams) -> Result<f64> {
    let mesh = f.mesh();
    mesh.check_params(params)?;
    let u = mean_velocity(f)?;
    let alpha = params.alpha();
    let mut total = 0.0;
    for (((m, v), s), w) in mesh.measures().iter().zip(f.values()).zip(mesh.speeds()).zip(mesh.velocities()) {
        let shifted = (w[0] - u[0]).powi(2) + (w[1] - u[1]).powi(2) + (s * s - w[0] * w[0] - w[1] * w[1]);
        let quartic = 0.25 * alpha * s.powi(4) - 0.5 * alpha * s * s;
        total += m * (params.noise() * entropy_term(*v) + v * (0.5 * shifted + quartic));
    }
    Ok(total)
}

/// `-(D + alpha)^2 / (4 alpha) - (d/2) ln(2 pi) D`, valid for every unit-mass density.
pub fn free_energy_lower_bound(params: &ModelParams) -> f64 {
    let (d, a) = (params.noise(), params.alpha());
    -(d + a).powi(2) / (4.0 * a) - 0.5 * params.dim() as f64 * (2.0 * std::f64::consts::PI).ln() * d
}

/// Upper bound on `int |v|^4 f` in terms of the free energy of `f`.
pub fn fourth_moment_bound(params: &ModelParams, free_energy: f64) -> f64 {
    let (d, a) = (params.noise(), params.alpha());
    let inner = (d + a).powi(2)
        + 4.0 * a * (free_energy + 0.5 * params.dim() as f64 * (2.0 * std::f64::consts::PI).ln() * d);
    ((d + a + inner.max(0.0).sqrt()) / a).powi(2)
}

/// A discrete stationary state used as the target of relative entropies and
/// as the base point of the quadratic forms.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    /// Discrete tilt, equal to the discrete mean velocity of `density`.
    pub u: Velocity,
    pub density: GridDensity,
}

impl Reference {
    /// Discrete counterpart of `state` on `mesh`.
    pub fn from_state(mesh: &Arc<Mesh>, state: &StationaryState) -> Result<Reference> {
        Self::from_order(mesh, &state.params, state.u)
    }

    /// Discrete stationary state with order parameter near `u`.
    pub fn from_order(mesh: &Arc<Mesh>, params: &ModelParams, u: f64) -> Result<Reference> {
        let (u_h, density) = mesh.discrete_stationary(params, u)?;
        Ok(Reference { u: [u_h, 0.0], density })
    }
}

/// `D int f ln(f / f_ref) - |u_f - u_ref|^2 / 2`, equal to `F[f] - F[f_ref]`.
pub fn relative_entropy(f: &GridDensity, reference: &Reference, params: &ModelParams) -> Result<f64> {
    same_mesh(f, &reference.density)?;
    let u = mean_velocity(f)?;
    let kl = kullback_leibler(f, &reference.density)?;
    let du = [u[0] - reference.u[0], u[1] - reference.u[1]];
    Ok(params.noise() * kl - 0.5 * norm_sq(du))
}

/// `int f ln(f / g)`; errors where `g` underflows but `f` does not.
pub fn kullback_leibler(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    same_mesh(f, g)?;
    let mut total = 0.0;
    for (cell, ((m, a), b)) in f.mesh().measures().iter().zip(f.values()).zip(g.values()).enumerate() {
        if *a == 0.0 {
            continue;
        }
        if *b <= 0.0 {
            return Err(Error::SupportMismatch { cell, value: *a });
        }
        total += m * a * (a / b).ln();
    }
    Ok(total)
}

fn same_mesh(f: &GridDensity, g: &GridDensity) -> Result<()> {
    if Arc::ptr_eq(f.mesh(), g.mesh()) || f.mesh() == g.mesh() {
        Ok(())
    } else {
        Err(Error::Geometry("densities live on different meshes".into()))
    }
}

/// Non-equilibrium Gibbs state `G_f` built from the mean velocity of `f`.
pub fn gibbs_state(f: &GridDensity, params: &ModelParams) -> Result<GridDensity> {
    f.mesh().gibbs(params, mean_velocity(f)?)
}

fn check_fisher_support(f: &GridDensity) -> Result<()> {
    let values = f.values();
    if let Some(cell) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidDensity { cell, value: values[cell] });
    }
    for face in f.mesh().faces() {
        let (a, b) = (values[face.lo], values[face.hi]);
        if a == 0.0 && b > HOLE_THRESHOLD {
            return Err(Error::NonPositiveCell(face.lo));
        }
        if b == 0.0 && a > HOLE_THRESHOLD {
            return Err(Error::NonPositiveCell(face.hi));
        }
    }
    Ok(())
}

/// Per-face terms shared by the two Fisher information formulas:
/// `(face, jump, log_ratio)` with `log_ratio = ln(f_i/G_i) - ln(f_j/G_j)`.
fn fisher_faces<'a>(
    f: &'a GridDensity,
    psi: &'a [f64],
    noise: f64,
) -> impl Iterator<Item = (crate::grid::Face, f64, f64)> + 'a {
    let values = f.values();
    f.mesh().faces().iter().filter_map(move |face| {
        let (a, b) = (values[face.lo], values[face.hi]);
        if a < UNDERFLOW || b < UNDERFLOW {
            return None;
        }
        let jump = (psi[face.hi] - psi[face.lo]) / noise;
        Some((*face, jump, a.ln() - b.ln() - jump))
    })
}

/// Relative Fisher information `D^2 int |grad ln(f / G_f)|^2 f`, in the form
/// that is exactly the dissipation of the free energy under the
/// exponentially fitted flux.
pub fn fisher_information(f: &GridDensity, params: &ModelParams) -> Result<f64> {
    f.mesh().check_params(params)?;
    check_fisher_support(f)?;
    let u = mean_velocity(f)?;
    let noise = params.noise();
    let psi = f.mesh().tilted_potential(params, u);
    let values = f.values();
    let total: f64 = fisher_faces(f, &psi, noise)
        .map(|(face, jump, delta)| {
            // flux = coupling D B(jump) f_i (1 - exp(-delta)) has the sign of delta
            let flux = face.coupling * noise * bernoulli(jump) * values[face.lo] * -(-delta).exp_m1();
            noise * flux * delta
        })
        .sum();
    Ok(total)
}

/// Fisher information from face differences of `ln(f / G_f)` weighted by the
/// arithmetic mean of `f`; agrees with [`fisher_information`] up to
/// discretization error.
pub fn fisher_information_gradient(f: &GridDensity, params: &ModelParams) -> Result<f64> {
    f.mesh().check_params(params)?;
    check_fisher_support(f)?;
    let u = mean_velocity(f)?;
    let noise = params.noise();
    let psi = f.mesh().tilted_potential(params, u);
    let values = f.values();
    let total: f64 = fisher_faces(f, &psi, noise)
        .map(|(face, _, delta)| {
            face.coupling * 0.5 * (values[face.lo] + values[face.hi]) * delta * delta
        })
        .sum();
    Ok(noise * noise * total)
}

/// `v_g = (1/D) int v g f_ref`.
pub fn velocity_response(g: &[f64], reference: &GridDensity, noise: f64) -> Velocity {
    let mesh = reference.mesh();
    let mut out = [0.0; 2];
    for (((m, f), v), gi) in mesh.measures().iter().zip(reference.values()).zip(mesh.velocities()).zip(g) {
        out[0] += m * f * gi * v[0];
        out[1] += m * f * gi * v[1];
    }
    [out[0] / noise, out[1] / noise]
}

/// `int g f_ref`.
pub fn weighted_mean(g: &[f64], reference: &GridDensity) -> f64 {
    reference
        .mesh()
        .measures()
        .iter()
        .zip(reference.values())
        .zip(g)
        .map(|((m, f), gi)| m * f * gi)
        .sum()
}

/// Subtracts the `f_ref`-weighted mean so that `int g f_ref = 0`.
pub fn project_mean_zero(g: &mut [f64], reference: &GridDensity) {
    let mean = weighted_mean(g, reference);
    g.iter_mut().for_each(|x| *x -= mean);
}

fn check_perturbation(g: &[f64], reference: &GridDensity) -> Result<()> {
    if g.len() != reference.values().len() {
        return Err(Error::Geometry("perturbation and reference sizes differ".into()));
    }
    let mean = weighted_mean(g, reference);
    if mean.abs() > MEAN_ZERO_TOLERANCE {
        return Err(Error::MeanConstraint(mean));
    }
    Ok(())
}

/// `Q_1[g] = D int g^2 f_ref - D^2 |v_g|^2`, the second variation of the free energy.
pub fn q1_form(g: &[f64], reference: &GridDensity, params: &ModelParams) -> Result<f64> {
    check_perturbation(g, reference)?;
    let noise = params.noise();
    let second: f64 = reference
        .mesh()
        .measures()
        .iter()
        .zip(reference.values())
        .zip(g)
        .map(|((m, f), gi)| m * f * gi * gi)
        .sum();
    Ok(noise * second - noise * noise * norm_sq(velocity_response(g, reference, noise)))
}

/// Face weights `coupling * f_i f_j / L(f_i, f_j)` of the linearized
/// exponentially fitted flux around a discrete stationary state.
pub fn linearized_face_weights(reference: &GridDensity) -> Vec<f64> {
    let values = reference.values();
    reference
        .mesh()
        .faces()
        .iter()
        .map(|face| {
            let (a, b) = (values[face.lo], values[face.hi]);
            let lm = log_mean(a, b);
            if lm > 0.0 {
                face.coupling * a * b / lm
            } else {
                0.0
            }
        })
        .collect()
}

/// `Q_2[g] = D^2 int |grad g - v_g|^2 f_ref`, the second variation of the Fisher information.
pub fn q2_form(g: &[f64], reference: &GridDensity, params: &ModelParams) -> Result<f64> {
    check_perturbation(g, reference)?;
    let noise = params.noise();
    let vg = velocity_response(g, reference, noise);
    let velocities = reference.mesh().velocities();
    let weights = linearized_face_weights(reference);
    let total: f64 = reference
        .mesh()
        .faces()
        .iter()
        .zip(&weights)
        .map(|(face, w)| {
            let dv = [
                velocities[face.lo][0] - velocities[face.hi][0],
                velocities[face.lo][1] - velocities[face.hi][1],
            ];
            let diff = g[face.lo] - g[face.hi] - dot(dv, vg);
            w * diff * diff
        })
        .sum();
    Ok(noise * noise * total)
}

/// Diagnostics of one density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub mass: f64,
    pub mean_velocity: Velocity,
    pub free_energy: f64,
    pub fisher_information: f64,
    /// Relative entropy to each named reference, in input order.
    pub relative_entropy: Vec<(String, f64)>,
}

impl FunctionalReport {
    pub fn evaluate(f: &GridDensity, params: &ModelParams, references: &[(String, Reference)]) -> Result<Self> {
        Ok(FunctionalReport {
            mass: f.mass(),
            mean_velocity: mean_velocity(f)?,
            free_energy: free_energy(f, params)?,
            fisher_information: fisher_information(f, params)?,
            relative_entropy: references
                .iter()
                .map(|(name, r)| Ok((name.clone(), relative_entropy(f, r, params)?)))
                .collect::<Result<_>>()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Geometry;

    fn line(cells: usize) -> Arc<Mesh> {
        Arc::new(Mesh::new(Geometry::Line { half_width: 3.2, cells }).unwrap())
    }

    #[test]
    fn stationary_reference_has_zero_fisher_and_entropy() {
        let p = ModelParams::new(1, 2.0, 0.3).unwrap();
        let mesh = line(200);
        let r = Reference::from_order(&mesh, &p, 0.82).unwrap();
        assert!((r.density.mean_velocity()[0] - r.u[0]).abs() < 1e-14);
        assert!(fisher_information(&r.density, &p).unwrap() < 1e-20);
        assert!(relative_entropy(&r.density, &r, &p).unwrap().abs() < 1e-14);
    }

    #[test]
    fn relative_entropy_is_free_energy_difference() {
        let p = ModelParams::new(1, 2.0, 0.3).unwrap();
        let mesh = line(160);
        let r = Reference::from_order(&mesh, &p, 0.82).unwrap();
        let f = GridDensity::from_log_density(mesh.clone(), |v| -(v[0] - 0.4).powi(2) / 0.6).unwrap();
        let lhs = relative_entropy(&f, &r, &p).unwrap();
        let rhs = free_energy(&f, &p).unwrap() - free_energy(&r.density, &p).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn completed_square_matches_definition() {
        let p = ModelParams::new(1, 1.7, 0.45).unwrap();
        let f = GridDensity::from_log_density(line(100), |v| -(v[0] + 0.3).powi(2)).unwrap();
        let a = free_energy(&f, &p).unwrap();
        let b = free_energy_completed_square(&f, &p).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn fisher_forms_agree_and_detect_holes() {
        let p = ModelParams::new(1, 2.0, 0.7).unwrap();
        let f = GridDensity::from_log_density(line(400), |v| -(v[0] - 0.2).powi(2) / 0.5).unwrap();
        let exact = fisher_information(&f, &p).unwrap();
        let grad = fisher_information_gradient(&f, &p).unwrap();
        assert!(exact > 0.0 && (exact - grad).abs() < 1e-2 * exact);
        let mut values = f.values().to_vec();
        values[200] = 0.0;
        let holed = GridDensity::normalized(f.mesh().clone(), values).unwrap();
        assert!(matches!(fisher_information(&holed, &p), Err(Error::NonPositiveCell(_))));
    }

    #[test]
    fn quadratic_forms_reject_nonzero_mean() {
        let p = ModelParams::new(1, 2.0, 0.7).unwrap();
        let r = Reference::from_order(&line(64), &p, 0.0).unwrap();
        let g = vec![1.0; 64];
        assert!(matches!(q1_form(&g, &r.density, &p), Err(Error::MeanConstraint(_))));
        let mut g: Vec<f64> = r.density.mesh().velocities().iter().map(|v| v[0]).collect();
        project_mean_zero(&mut g, &r.density);
        assert!(q2_form(&g, &r.density, &p).unwrap() > 0.0);
    }
}
