//! Linearization of the discrete dynamics around a stationary state.
//!
//! Around a discrete stationary density `f` the perturbation `g` in
//! `f (1 + eps g)` evolves by
//!
//! `mu_i f_i (L g)_i = -D sum_j w_ij [(g_i - g_j) - v_g . (v_i - v_j)]`,
//!
//! with face weights `w_ij = coupling f_i f_j / L(f_i, f_j)` and
//! `v_g = (1/D) sum mu f v g`. This operator is self-adjoint for
//! `<g, h> = D sum mu f g h - D^2 v_g . v_h` and `-<g, L g> = Q_2[g]` holds
//! exactly on the grid.
//!
//! In the variables `y = sqrt(mu f) g` the scalar product is `D I - B B^T` with
//! `B` the columns `sqrt(mu f) v_k`, the mean-zero constraint is `y . sqrt(mu f) = 0`
//! and the Dirichlet part is a weighted graph Laplacian `K`. After compressing
//! out the constraint with a Householder reflection the optimal constant in
//! `Q_2 >= c Q_1` is the smallest eigenvalue of `M^{1/2} K M^{1/2}`, where
//! `M^{1/2}` is a rank-`k` update of a multiple of the identity.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flux::log_mean;
use crate::functionals::{linearized_face_weights, project_mean_zero, Reference};
use crate::grid::{Geometry, GridDensity, Mesh, Velocity};
use crate::model::ModelParams;
use crate::stationary::{order_parameter, Branch, StationarySettings};

/// Relative size below which a metric eigenvalue counts as a null mode.
pub const NULL_MODE_TOLERANCE: f64 = 1e-8;

/// Linearized operator around a discrete stationary state.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    params: ModelParams,
    reference: Reference,
    weights: Vec<f64>,
    /// `sqrt(mu_i f_i)`.
    root_weight: Vec<f64>,
    components: usize,
}

/// Builds the linearized operator; fails when the reference has empty cells
/// or when the scalar product is not positive definite on mean-zero functions.
pub fn assemble_linearized(reference: &Reference, params: &ModelParams) -> Result<LinearizedOperator> {
    let density = &reference.density;
    density.mesh().check_params(params)?;
    if let Some(cell) = density.values().iter().position(|f| !(*f > 0.0)) {
        return Err(Error::NonPositiveCell(cell));
    }
    let root_weight = density
        .mesh()
        .measures()
        .iter()
        .zip(density.values())
        .map(|(m, f)| (m * f).sqrt())
        .collect();
    let op = LinearizedOperator {
        params: *params,
        reference: reference.clone(),
        weights: linearized_face_weights(density),
        root_weight,
        components: density.mesh().velocity_components(),
    };
    op.metric()?;
    Ok(op)
}

/// Orthonormal basis of the span of the compressed velocity columns with the
/// metric eigenvalues `D - sigma` on it.
#[derive(Debug, Clone)]
struct Metric {
    basis: Vec<DVector<f64>>,
    eigenvalues: Vec<f64>,
    /// Basis directions with vanishing metric eigenvalue that are rotations.
    null: Vec<usize>,
}

/// Reflection `H = I - 2 h h^T / |h|^2` mapping `w` onto a multiple of the first axis.
struct Householder {
    h: DVector<f64>,
    norm_sq: f64,
}

impl Householder {
    fn new(w: &[f64]) -> Self {
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut h = DVector::from_column_slice(w);
        // all entries of w are positive
        h[0] += norm;
        let norm_sq = h.norm_squared();
        Householder { h, norm_sq }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let c = 2.0 * self.h.dot(x) / self.norm_sq;
        x - &self.h * c
    }

    /// Coordinates of `x` (orthogonal to `w`) in the compressed space.
    fn compress(&self, x: &[f64]) -> DVector<f64> {
        let y = self.apply(&DVector::from_column_slice(x));
        y.rows(1, y.len() - 1).into_owned()
    }

    /// Inverse of [`Householder::compress`].
    fn expand(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(z.len() + 1);
        y.rows_mut(1, z.len()).copy_from(z);
        self.apply(&y)
    }

    /// `(H X H)` with the first row and column dropped, for symmetric `X`.
    fn compress_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xh = x * &self.h;
        let c = 2.0 / self.norm_sq;
        let hxh = self.h.dot(&xh);
        let n = x.nrows();
        let mut out = DMatrix::zeros(n - 1, n - 1);
        for j in 1..n {
            for i in 1..n {
                out[(i - 1, j - 1)] = x[(i, j)] - c * (self.h[i] * xh[j] + xh[i] * self.h[j])
                    + c * c * hxh * self.h[i] * self.h[j];
            }
        }
        out
    }
}

impl LinearizedOperator {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    fn density(&self) -> &GridDensity {
        &self.reference.density
    }

    fn mesh(&self) -> &Arc<Mesh> {
        self.reference.density.mesh()
    }

    pub fn dimension(&self) -> usize {
        self.root_weight.len()
    }

    /// `v_g = (1/D) sum mu f v g`.
    pub fn response(&self, g: &[f64]) -> Velocity {
        crate::functionals::velocity_response(g, self.density(), self.params.noise())
    }

    /// `<g, h> = D sum mu f g h - D^2 v_g . v_h`.
    pub fn scalar_product(&self, g: &[f64], h: &[f64]) -> f64 {
        let noise = self.params.noise();
        let local: f64 = self.root_weight.iter().zip(g.iter().zip(h)).map(|(r, (a, b))| r * r * a * b).sum();
        let (vg, vh) = (self.response(g), self.response(h));
        noise * local - noise * noise * (vg[0] * vh[0] + vg[1] * vh[1])
    }

    /// `L g`.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let noise = self.params.noise();
        let vg = self.response(g);
        let velocities = self.mesh().velocities();
        let mut out = vec![0.0; g.len()];
        for (face, w) in self.mesh().faces().iter().zip(&self.weights) {
            let (i, j) = (face.lo, face.hi);
            let dv = [velocities[i][0] - velocities[j][0], velocities[i][1] - velocities[j][1]];
            let flux = w * (g[i] - g[j] - vg[0] * dv[0] - vg[1] * dv[1]);
            out[i] -= flux;
            out[j] += flux;
        }
        for (o, r) in out.iter_mut().zip(&self.root_weight) {
            *o *= noise / (r * r);
        }
        out
    }

    /// `Q_2[g] = D^2 sum w (g_i - g_j - v_g . (v_i - v_j))^2`.
    pub fn q2(&self, g: &[f64]) -> f64 {
        let noise = self.params.noise();
        let vg = self.response(g);
        let velocities = self.mesh().velocities();
        let total: f64 = self
            .mesh()
            .faces()
            .iter()
            .zip(&self.weights)
            .map(|(face, w)| {
                let (i, j) = (face.lo, face.hi);
                let dv = [velocities[i][0] - velocities[j][0], velocities[i][1] - velocities[j][1]];
                let d = g[i] - g[j] - vg[0] * dv[0] - vg[1] * dv[1];
                w * d * d
            })
            .sum();
        noise * noise * total
    }

    fn householder(&self) -> Householder {
        Householder::new(&self.root_weight)
    }

    /// Graph Laplacian `W^{-1/2} K W^{-1/2}` of the Dirichlet form, dense.
    fn laplacian(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let values = self.density().values();
        let measures = self.mesh().measures();
        let mut k = DMatrix::zeros(n, n);
        for face in self.mesh().faces() {
            let (i, j) = (face.lo, face.hi);
            let (fi, fj) = (values[i], values[j]);
            let lm = log_mean(fi, fj);
            k[(i, i)] += face.coupling * fj / (measures[i] * lm);
            k[(j, j)] += face.coupling * fi / (measures[j] * lm);
            let off = face.coupling * (fi * fj).sqrt() / (lm * (measures[i] * measures[j]).sqrt());
            k[(i, j)] -= off;
            k[(j, i)] -= off;
        }
        k
    }

    fn velocity_columns(&self) -> Vec<Vec<f64>> {
        let velocities = self.mesh().velocities();
        (0..self.components)
            .map(|c| self.root_weight.iter().zip(velocities).map(|(r, v)| r * v[c]).collect())
            .collect()
    }

    fn metric(&self) -> Result<Metric> {
        let noise = self.params.noise();
        let house = self.householder();
        let columns: Vec<DVector<f64>> =
            self.velocity_columns().iter().map(|b| house.compress(b)).collect();
        let k = columns.len();
        let gram = DMatrix::from_fn(k, k, |a, b| columns[a].dot(&columns[b]));
        let eig = SymmetricEigen::new(gram);
        let mut basis = Vec::new();
        let mut eigenvalues = Vec::new();
        let mut null = Vec::new();
        for (idx, sigma) in eig.eigenvalues.iter().enumerate() {
            if *sigma <= 1e-300 {
                continue;
            }
            let coeffs = eig.eigenvectors.column(idx);
            let mut q = DVector::zeros(columns[0].len());
            for (c, col) in columns.iter().enumerate() {
                q += col * coeffs[c];
            }
            q /= sigma.sqrt();
            let lambda = noise - sigma;
            if lambda < -NULL_MODE_TOLERANCE * noise {
                return Err(Error::IndefiniteMetric(lambda));
            }
            if lambda <= NULL_MODE_TOLERANCE * noise {
                // a null direction is admissible only as the rotation mode v_2
                let rotation = columns.get(1).map(|b| (q.dot(b) / b.norm()).abs()).unwrap_or(0.0);
                if rotation < 0.9 {
                    return Err(Error::IndefiniteMetric(lambda));
                }
                null.push(basis.len());
            }
            basis.push(q);
            eigenvalues.push(lambda.max(0.0));
        }
        Ok(Metric { basis, eigenvalues, null })
    }

    /// Compressed matrices `(A, M)` of `Q_2` and `Q_1` on mean-zero functions, in
    /// the variables `y = sqrt(mu f) g`.
    pub fn restricted_pencil(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let noise = self.params.noise();
        let house = self.householder();
        let lap = house.compress_matrix(&self.laplacian());
        let n = lap.nrows();
        let columns: Vec<DVector<f64>> =
            self.velocity_columns().iter().map(|b| house.compress(b)).collect();
        let mut metric = DMatrix::identity(n, n) * noise;
        for b in &columns {
            metric -= b * b.transpose();
        }
        let a = &metric * &lap * &metric;
        Ok((a, metric))
    }

    /// `M^{1/2} K M^{1/2}` on mean-zero functions, plus the null directions.
    fn coercivity_matrix(&self) -> Result<(DMatrix<f64>, Vec<DVector<f64>>)> {
        let noise = self.params.noise();
        let metric = self.metric()?;
        let house = self.householder();
        let lap = house.compress_matrix(&self.laplacian());
        // T = sqrt(D) I + sum_j (sqrt(lambda_j) - sqrt(D)) q_j q_j^T
        let root = noise.sqrt();
        let deltas: Vec<f64> = metric.eigenvalues.iter().map(|l| l.sqrt() - root).collect();
        let mut c = lap.clone() * noise;
        for (q, d) in metric.basis.iter().zip(&deltas) {
            let kq = &lap * q;
            // root * (K q d q^T + q d q^T K)
            c += (&kq * q.transpose() + q * kq.transpose()) * (root * d);
        }
        for (qa, da) in metric.basis.iter().zip(&deltas) {
            for (qb, db) in metric.basis.iter().zip(&deltas) {
                let kab = qa.dot(&(&lap * qb));
                c += qa * qb.transpose() * (da * db * kab);
            }
        }
        let null = metric.null.iter().map(|&j| metric.basis[j].clone()).collect();
        Ok((c, null))
    }

    /// Smallest eigenvalue of the weighted Dirichlet form over `sum mu f h^2` on
    /// mean-zero `h`.
    pub fn poincare_constant(&self) -> Result<f64> {
        let lap = self.householder().compress_matrix(&self.laplacian());
        smallest_eigenvalue(lap)
    }

    /// Optimal constant in `Q_2 >= c Q_1` with rotation modes removed, the
    /// same constant restricted to perturbations even in `v_2`, and the
    /// number of removed modes.
    pub fn coercivity_constant(&self) -> Result<Coercivity> {
        let (mut c, null) = self.coercivity_matrix()?;
        let shift = 2.0 * c.diagonal().amax() + 1.0;
        for q in &null {
            c += q * q.transpose() * shift;
        }
        let disk = matches!(self.mesh().geometry(), Geometry::Disk { .. });
        if !disk {
            let optimal = smallest_eigenvalue(c)?;
            return Ok(Coercivity { optimal, axis_restricted: optimal, excluded_modes: null.len() });
        }
        let eig = SymmetricEigen::try_new(c, f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigen("symmetric eigen-solver did not converge".into()))?;
        let house = self.householder();
        let mirror = self.mirror_map();
        let mut optimal = f64::INFINITY;
        let mut even = f64::INFINITY;
        for (k, lambda) in eig.eigenvalues.iter().enumerate() {
            optimal = optimal.min(*lambda);
            let y = house.expand(&eig.eigenvectors.column(k).into_owned());
            let reflected = DVector::from_fn(y.len(), |i, _| y[mirror[i]]);
            if y.dot(&reflected) > 0.0 {
                even = even.min(*lambda);
            }
        }
        Ok(Coercivity { optimal, axis_restricted: even, excluded_modes: null.len() })
    }

    /// Cell index of the mirror image under `v_2 -> -v_2` on the disk.
    fn mirror_map(&self) -> Vec<usize> {
        match *self.mesh().geometry() {
            Geometry::Disk { radial_cells, angular_cells, .. } => (0..radial_cells * angular_cells)
                .map(|idx| {
                    let (i, k) = (idx / angular_cells, idx % angular_cells);
                    i * angular_cells + (angular_cells - 1 - k)
                })
                .collect(),
            _ => (0..self.dimension()).collect(),
        }
    }

    /// Deterministic mean-zero test vectors with broad spectral content.
    pub fn probe_vectors(&self, count: usize) -> Vec<Vec<f64>> {
        let n = self.dimension();
        (0..count)
            .map(|k| {
                let kf = k as f64 + 1.0;
                let mut g: Vec<f64> = (0..n)
                    .map(|i| {
                        let x = i as f64;
                        (0.37 * kf * x + kf * kf).sin() + 0.5 * (1.91 * x / kf + 0.3 * kf).cos()
                    })
                    .collect();
                project_mean_zero(&mut g, self.density());
                g
            })
            .collect()
    }

    /// Largest `|<g, L h> - <L g, h>|` over probe pairs, relative to `sqrt(Q_2[g] Q_2[h])`.
    pub fn selfadjoint_residual(&self, count: usize) -> f64 {
        let probes = self.probe_vectors(count);
        let images: Vec<Vec<f64>> = probes.iter().map(|g| self.apply(g)).collect();
        let forms: Vec<f64> = probes.iter().map(|g| self.q2(g)).collect();
        let mut worst = 0.0f64;
        for a in 0..probes.len() {
            for b in a + 1..probes.len() {
                let lhs = self.scalar_product(&probes[a], &images[b]);
                let rhs = self.scalar_product(&images[a], &probes[b]);
                worst = worst.max((lhs - rhs).abs() / (forms[a] * forms[b]).sqrt());
            }
        }
        worst
    }

    /// Largest `|Q_2[g] + <g, L g>| / Q_2[g]` over probes.
    pub fn q2_identity_residual(&self, count: usize) -> f64 {
        self.probe_vectors(count)
            .iter()
            .map(|g| {
                let q2 = self.q2(g);
                (q2 + self.scalar_product(g, &self.apply(g))).abs() / q2
            })
            .fold(0.0, f64::max)
    }
}

fn smallest_eigenvalue(m: DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Err(Error::Eigen("empty matrix".into()));
    }
    let values = m.symmetric_eigenvalues();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        Ok(min)
    } else {
        Err(Error::Eigen("non-finite eigenvalue".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coercivity {
    pub optimal: f64,
    pub axis_restricted: f64,
    pub excluded_modes: usize,
}

/// Poincaré constant of an arbitrary positive density on its mesh.
pub fn poincare_constant_of(density: &GridDensity, params: &ModelParams) -> Result<f64> {
    let reference = Reference { u: density.mean_velocity(), density: density.clone() };
    let op = LinearizedOperator {
        params: *params,
        weights: linearized_face_weights(density),
        root_weight: density.mesh().measures().iter().zip(density.values()).map(|(m, f)| (m * f).sqrt()).collect(),
        components: density.mesh().velocity_components(),
        reference,
    };
    if let Some(cell) = density.values().iter().position(|f| !(*f > 0.0)) {
        return Err(Error::NonPositiveCell(cell));
    }
    op.poincare_constant()
}

/// Spectral gap data of the linearized operator at one stationary state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub params: ModelParams,
    pub reference: Branch,
    pub geometry: Geometry,
    pub cells: usize,
    /// Discrete order parameter of the reference.
    pub order: f64,
    pub lambda_poincare: f64,
    /// `|Lambda_h - Lambda_{2h}| / 3`, when the mesh can be coarsened.
    pub lambda_error: Option<f64>,
    pub c_coercive_opt: f64,
    /// `D Lambda`.
    pub c_paper: f64,
    /// `2 c_opt`.
    pub predicted_rate: f64,
    /// Optimal constant over perturbations even in the transverse velocity.
    pub c_axis_restricted: f64,
    /// Discrete longitudinal variance over `D` (polarized references).
    pub kappa: Option<f64>,
    /// `D Lambda (1 - kappa)` (polarized references).
    pub c_paper_polarized: Option<f64>,
    pub excluded_modes: usize,
    pub selfadjoint_residual: f64,
    pub q2_identity_residual: f64,
}

/// Number of probe vectors used for the residuals in [`SpectralReport`].
pub const PROBES: usize = 20;

/// Builds the reference of the requested branch on `geometry` and computes
/// the spectral report.
pub fn spectral_report(
    params: &ModelParams,
    geometry: Geometry,
    branch: Branch,
    settings: &StationarySettings,
) -> Result<SpectralReport> {
    let u = match branch {
        Branch::Isotropic => 0.0,
        Branch::Polarized => order_parameter(params, settings)?.ok_or_else(|| Error::Domain {
            what: "polarized spectrum",
            requirement: "D < D*",
            noise: params.noise(),
            critical: f64::NAN,
        })?,
    };
    let mesh = Arc::new(Mesh::new(geometry)?);
    let reference = Reference::from_order(&mesh, params, u)?;
    let op = assemble_linearized(&reference, params)?;
    let lambda = op.poincare_constant()?;
    let lambda_error = match geometry.coarsened() {
        Ok(coarse) => {
            let coarse_mesh = Arc::new(Mesh::new(coarse)?);
            let coarse_ref = Reference::from_order(&coarse_mesh, params, u)?;
            let coarse_lambda = poincare_constant_of(&coarse_ref.density, params)?;
            Some((lambda - coarse_lambda).abs() / 3.0)
        }
        Err(_) => None,
    };
    let coercivity = op.coercivity_constant()?;
    let noise = params.noise();
    let kappa = (branch == Branch::Polarized).then(|| {
        let m1 = reference.u[0];
        let second = reference.density.moment(|v| v[0] * v[0]);
        (second - m1 * m1) / noise
    });
    Ok(SpectralReport {
        params: *params,
        reference: branch,
        geometry,
        cells: mesh.len(),
        order: reference.u[0],
        lambda_poincare: lambda,
        lambda_error,
        c_coercive_opt: coercivity.optimal,
        c_paper: noise * lambda,
        predicted_rate: 2.0 * coercivity.optimal,
        c_axis_restricted: coercivity.axis_restricted,
        kappa,
        c_paper_polarized: kappa.map(|k| noise * lambda * (1.0 - k)),
        excluded_modes: coercivity.excluded_modes,
        selfadjoint_residual: op.selfadjoint_residual(PROBES),
        q2_identity_residual: op.q2_identity_residual(PROBES),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{q1_form, q2_form};

    fn line_reference(noise: f64, u: f64, cells: usize) -> (ModelParams, Reference) {
        let p = ModelParams::new(1, 2.0, noise).unwrap();
        let mesh = Arc::new(Mesh::new(Geometry::Line { half_width: 3.2, cells }).unwrap());
        let r = Reference::from_order(&mesh, &p, u).unwrap();
        (p, r)
    }

    #[test]
    fn operator_is_selfadjoint_with_q2_identity() {
        let (p, r) = line_reference(0.8, 0.0, 200);
        let op = assemble_linearized(&r, &p).unwrap();
        assert!(op.selfadjoint_residual(10) < 1e-10);
        assert!(op.q2_identity_residual(10) < 1e-10);
        let g = &op.probe_vectors(1)[0];
        let direct = q2_form(g, &r.density, &p).unwrap();
        assert!((direct - op.q2(g)).abs() < 1e-12 * direct);
        assert!((q1_form(g, &r.density, &p).unwrap() - op.scalar_product(g, g)).abs() < 1e-12);
    }

    #[test]
    fn pencil_reproduces_quadratic_forms() {
        let (p, r) = line_reference(0.8, 0.0, 60);
        let op = assemble_linearized(&r, &p).unwrap();
        let (a, m) = op.restricted_pencil().unwrap();
        let house = op.householder();
        let g = &op.probe_vectors(2)[1];
        let y: Vec<f64> = g.iter().zip(&op.root_weight).map(|(gi, r)| gi * r).collect();
        let z = house.compress(&y);
        assert!((z.dot(&(&m * &z)) - op.scalar_product(g, g)).abs() < 1e-12);
        let q2 = op.q2(g);
        assert!((z.dot(&(&a * &z)) - q2).abs() < 1e-9 * q2);
    }

    #[test]
    fn isotropic_below_threshold_has_indefinite_metric() {
        let (p, r) = line_reference(0.4, 0.0, 120);
        assert!(matches!(assemble_linearized(&r, &p), Err(Error::IndefiniteMetric(_))));
    }

    #[test]
    fn gaussian_weight_gives_ornstein_uhlenbeck_gap() {
        let noise = 0.5;
        let p = ModelParams::new(1, 2.0, noise).unwrap();
        let mesh = Arc::new(Mesh::new(Geometry::Line { half_width: 6.0, cells: 400 }).unwrap());
        let g = GridDensity::from_log_density(mesh, |v| -v[0] * v[0] / (2.0 * noise)).unwrap();
        let lambda = poincare_constant_of(&g, &p).unwrap();
        assert!((lambda - 1.0 / noise).abs() < 1e-3, "{lambda}");
    }

    #[test]
    fn coercivity_constant_is_below_v1_quotient() {
        let (p, r) = line_reference(0.8, 0.0, 200);
        let op = assemble_linearized(&r, &p).unwrap();
        let c = op.coercivity_constant().unwrap();
        let mut g: Vec<f64> = r.density.mesh().velocities().iter().map(|v| v[0]).collect();
        project_mean_zero(&mut g, &r.density);
        let quotient = op.q2(&g) / op.scalar_product(&g, &g);
        assert!(c.optimal > 0.0 && c.optimal <= quotient * (1.0 + 1e-10));
        assert_eq!(c.excluded_modes, 0);
    }
}
