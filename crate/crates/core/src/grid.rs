//! Finite-volume meshes of a truncated velocity domain and densities on them.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{confining_potential, sphere_area, ModelParams};
use crate::quadrature::adaptive::{integrate, AdaptiveOptions};
use crate::roots::brent;

/// Mean velocities are stored as `[v_1, v_2]`; the second component is only
/// nonzero on the full disk.
pub type Velocity = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    /// `[-half_width, half_width]` in one dimension.
    Line { half_width: f64, cells: usize },
    /// Axisymmetric `d >= 2` densities `f(s, theta)` on `[0, radius] x [0, pi]`,
    /// with `theta` the angle to `e_1`.
    Polar { dim: usize, radius: f64, radial_cells: usize, angular_cells: usize },
    /// The full disk of radius `radius` in two dimensions, periodic in the angle.
    Disk { radius: f64, radial_cells: usize, angular_cells: usize },
}

impl Geometry {
    pub fn dim(&self) -> usize {
        match self {
            Geometry::Line { .. } => 1,
            Geometry::Polar { dim, .. } => *dim,
            Geometry::Disk { .. } => 2,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            Geometry::Line { half_width, .. } => *half_width,
            Geometry::Polar { radius, .. } | Geometry::Disk { radius, .. } => *radius,
        }
    }

    pub fn cell_count(&self) -> usize {
        match self {
            Geometry::Line { cells, .. } => *cells,
            Geometry::Polar { radial_cells, angular_cells, .. }
            | Geometry::Disk { radial_cells, angular_cells, .. } => radial_cells * angular_cells,
        }
    }

    /// Same domain with every resolution halved.
    pub fn coarsened(&self) -> Result<Geometry> {
        let half = |n: usize| {
            if n.is_multiple_of(2) && n >= 8 {
                Ok(n / 2)
            } else {
                Err(Error::Geometry(format!("cannot coarsen a resolution of {n}")))
            }
        };
        Ok(match *self {
            Geometry::Line { half_width, cells } => Geometry::Line { half_width, cells: half(cells)? },
            Geometry::Polar { dim, radius, radial_cells, angular_cells } => Geometry::Polar {
                dim,
                radius,
                radial_cells: half(radial_cells)?,
                angular_cells: half(angular_cells)?,
            },
            Geometry::Disk { radius, radial_cells, angular_cells } => Geometry::Disk {
                radius,
                radial_cells: half(radial_cells)?,
                angular_cells: half(angular_cells)?,
            },
        })
    }

    /// Same domain with every resolution doubled.
    pub fn refined(&self) -> Geometry {
        match *self {
            Geometry::Line { half_width, cells } => Geometry::Line { half_width, cells: 2 * cells },
            Geometry::Polar { dim, radius, radial_cells, angular_cells } => Geometry::Polar {
                dim,
                radius,
                radial_cells: 2 * radial_cells,
                angular_cells: 2 * angular_cells,
            },
            Geometry::Disk { radius, radial_cells, angular_cells } => Geometry::Disk {
                radius,
                radial_cells: 2 * radial_cells,
                angular_cells: 2 * angular_cells,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Geometry::Line { half_width, cells } => half_width > 0.0 && cells >= 2,
            Geometry::Polar { dim, radius, radial_cells, angular_cells } => {
                dim >= 2 && radius > 0.0 && radial_cells >= 2 && angular_cells >= 2
            }
            Geometry::Disk { radius, radial_cells, angular_cells } => {
                radius > 0.0 && radial_cells >= 2 && angular_cells >= 4
            }
        };
        if ok && self.radius().is_finite() {
            Ok(())
        } else {
            Err(Error::Geometry(format!("invalid geometry {self:?}")))
        }
    }
}

/// A face between cells `lo < hi` with transmissibility `coupling = area / distance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub lo: usize,
    pub hi: usize,
    pub coupling: f64,
}

/// Cells and faces of a [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    geometry: Geometry,
    measures: Vec<f64>,
    speeds: Vec<f64>,
    velocities: Vec<Velocity>,
    faces: Vec<Face>,
    bandwidth: usize,
}

fn sine_power_integral(power: usize, a: f64, b: f64) -> Result<f64> {
    match power {
        0 => Ok(b - a),
        1 => Ok(a.cos() - b.cos()),
        p => {
            let opts = AdaptiveOptions {
                rel_tol: 1e-14,
                abs_tol: 1e-300,
                max_subdivisions: 200,
                initial_pieces: 1,
            };
            Ok(integrate(|t| Ok(t.sin().powi(p as i32)), a, b, &opts)?.value)
        }
    }
}

fn radial_power_integral(power: usize, a: f64, b: f64) -> f64 {
    let m = power as i32 + 1;
    (b.powi(m) - a.powi(m)) / m as f64
}

impl Mesh {
    pub fn new(geometry: Geometry) -> Result<Mesh> {
        geometry.validate()?;
        match geometry {
            Geometry::Line { half_width, cells } => Ok(Self::line(geometry, half_width, cells)),
            Geometry::Polar { dim, radius, radial_cells, angular_cells } => {
                Self::polar(geometry, dim, radius, radial_cells, angular_cells, PI, false)
            }
            Geometry::Disk { radius, radial_cells, angular_cells } => {
                Self::polar(geometry, 2, radius, radial_cells, angular_cells, 2.0 * PI, true)
            }
        }
    }

    fn line(geometry: Geometry, half_width: f64, cells: usize) -> Mesh {
        let h = 2.0 * half_width / cells as f64;
        let velocities: Vec<Velocity> =
            (0..cells).map(|i| [-half_width + (i as f64 + 0.5) * h, 0.0]).collect();
        let faces = (0..cells - 1).map(|i| Face { lo: i, hi: i + 1, coupling: 1.0 / h }).collect();
        Mesh {
            geometry,
            measures: vec![h; cells],
            speeds: velocities.iter().map(|v| v[0].abs()).collect(),
            velocities,
            faces,
            bandwidth: 1,
        }
    }

    /// Cell `(i, k)` in speed and angle has index `i * angular_cells + k`.
    fn polar(
        geometry: Geometry,
        dim: usize,
        radius: f64,
        radial_cells: usize,
        angular_cells: usize,
        span: f64,
        periodic: bool,
    ) -> Result<Mesh> {
        let hs = radius / radial_cells as f64;
        let ht = span / angular_cells as f64;
        // the full disk carries no |S^0| symmetry factor
        let sphere = if periodic { 1.0 } else { sphere_area(dim - 2) };
        let sine = dim - 2;
        let angular_widths: Vec<f64> = (0..angular_cells)
            .map(|k| sine_power_integral(sine, k as f64 * ht, (k + 1) as f64 * ht))
            .collect::<Result<_>>()?;
        let n = radial_cells * angular_cells;
        let (mut measures, mut speeds, mut velocities) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..radial_cells {
            let (a, b) = (i as f64 * hs, (i + 1) as f64 * hs);
            let radial = radial_power_integral(dim - 1, a, b);
            let s = (i as f64 + 0.5) * hs;
            for (k, width) in angular_widths.iter().enumerate() {
                let theta = (k as f64 + 0.5) * ht;
                measures.push(sphere * radial * width);
                speeds.push(s);
                let transverse = if periodic { s * theta.sin() } else { 0.0 };
                velocities.push([s * theta.cos(), transverse]);
            }
        }
        let mut faces = Vec::new();
        for i in 0..radial_cells {
            let s = (i as f64 + 0.5) * hs;
            let (a, b) = (i as f64 * hs, (i + 1) as f64 * hs);
            let ring = radial_power_integral(dim - 2, a, b) / (s * ht);
            for (k, width) in angular_widths.iter().enumerate() {
                let here = i * angular_cells + k;
                if k + 1 < angular_cells {
                    let tf = (k + 1) as f64 * ht;
                    let coupling = sphere * tf.sin().powi(sine as i32) * ring;
                    faces.push(Face { lo: here, hi: here + 1, coupling });
                } else if periodic {
                    faces.push(Face { lo: i * angular_cells, hi: here, coupling: ring });
                }
                if i + 1 < radial_cells {
                    let sf = (i + 1) as f64 * hs;
                    let coupling = sphere * sf.powi(dim as i32 - 1) * width / hs;
                    faces.push(Face { lo: here, hi: here + angular_cells, coupling });
                }
            }
        }
        Ok(Mesh { geometry, measures, speeds, velocities, faces, bandwidth: angular_cells })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    /// `|v|` at cell centers.
    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    /// Velocity components at cell centers.
    pub fn velocities(&self) -> &[Velocity] {
        &self.velocities
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Largest `|lo - hi|` over faces.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Number of mean-velocity components the geometry can represent.
    pub fn velocity_components(&self) -> usize {
        match self.geometry {
            Geometry::Disk { .. } => 2,
            _ => 1,
        }
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if self.geometry.dim() == params.dim() {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "mesh is {}-dimensional but the model has d = {}",
                self.geometry.dim(),
                params.dim()
            )))
        }
    }

    pub fn mass(&self, values: &[f64]) -> f64 {
        self.measures.iter().zip(values).map(|(m, f)| m * f).sum()
    }

    /// `sum mu_i f_i v_i`, without normalization.
    pub fn first_moment(&self, values: &[f64]) -> Velocity {
        let mut out = [0.0; 2];
        for ((m, f), v) in self.measures.iter().zip(values).zip(&self.velocities) {
            out[0] += m * f * v[0];
            out[1] += m * f * v[1];
        }
        out
    }

    /// `psi_i = phi(|v_i|) - u . v_i` at cell centers.
    pub fn tilted_potential(&self, params: &ModelParams, u: Velocity) -> Vec<f64> {
        self.speeds
            .iter()
            .zip(&self.velocities)
            .map(|(s, v)| confining_potential(*s, params.alpha()) - u[0] * v[0] - u[1] * v[1])
            .collect()
    }

    /// Discrete Gibbs state `exp(-psi / D)` normalized on the mesh.
    pub fn gibbs(self: &Arc<Self>, params: &ModelParams, u: Velocity) -> Result<GridDensity> {
        self.check_params(params)?;
        let psi = self.tilted_potential(params, u);
        let noise = params.noise();
        let floor = psi.iter().cloned().fold(f64::INFINITY, f64::min);
        let values: Vec<f64> = psi.iter().map(|p| (-(p - floor) / noise).exp()).collect();
        GridDensity::normalized(self.clone(), values)
    }

    /// Discrete stationary state: the Gibbs state whose own discrete mean
    /// velocity equals its tilt `u_h e_1`, with `u_h` near `u_guess`.
    ///
    /// Returns `(u_h, density)`; `u_guess = 0` gives the isotropic state.
    pub fn discrete_stationary(
        self: &Arc<Self>,
        params: &ModelParams,
        u_guess: f64,
    ) -> Result<(f64, GridDensity)> {
        if u_guess == 0.0 {
            return Ok((0.0, self.gibbs(params, [0.0, 0.0])?));
        }
        let gap = |u: f64| -> Result<f64> { Ok(self.gibbs(params, [u, 0.0])?.mean_velocity()[0] - u) };
        let (mut lo, mut hi) = (0.5 * u_guess, 1.5 * u_guess);
        let mut tries = 0;
        while gap(lo)? <= 0.0 || gap(hi)? >= 0.0 {
            lo *= 0.5;
            hi *= 1.5;
            tries += 1;
            if tries > 40 {
                return Err(Error::BracketFailure { what: "discrete mean velocity", lower: lo, upper: hi });
            }
        }
        let u = brent(gap, lo, hi, 1e-15, "discrete mean velocity")?;
        Ok((u, self.gibbs(params, [u, 0.0])?))
    }
}

/// Smallest `L` on a 0.01 grid where `f_u(L e_1)` and `f_u(-L e_1)` lie below
/// `ratio` times the peak of `f_u`.
pub fn truncation_radius(params: &ModelParams, u: f64, ratio: f64) -> f64 {
    let noise = params.noise();
    let exponent = |s: f64| (confining_potential(s, params.alpha()) - u * s) / noise;
    let drop = -ratio.ln();
    let mut lowest = f64::INFINITY;
    let mut s = 0.0;
    loop {
        let e = exponent(s);
        lowest = lowest.min(e);
        if e - lowest >= drop && s > 0.0 {
            return (s * 100.0).ceil() / 100.0;
        }
        s += 0.01;
    }
}

/// A nonnegative unit-mass density on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

/// Allowed deviation of the mass from one.
pub const MASS_TOLERANCE: f64 = 1e-10;

impl GridDensity {
    /// Wraps values that are already nonnegative with unit mass.
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<GridDensity> {
        Self::check_values(&mesh, &values)?;
        let mass = mesh.mass(&values);
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::NotNormalized(mass));
        }
        Ok(GridDensity { mesh, values })
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(mesh: Arc<Mesh>, mut values: Vec<f64>) -> Result<GridDensity> {
        Self::check_values(&mesh, &values)?;
        let mass = mesh.mass(&values);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::ZeroMass);
        }
        values.iter_mut().for_each(|f| *f /= mass);
        Ok(GridDensity { mesh, values })
    }

    /// Wraps nonnegative values without touching their mass.
    pub fn unnormalized(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<GridDensity> {
        Self::check_values(&mesh, &values)?;
        Ok(GridDensity { mesh, values })
    }

    /// Density `exp(log_density(v))` sampled at cell centers and normalized.
    pub fn from_log_density<F>(mesh: Arc<Mesh>, log_density: F) -> Result<GridDensity>
    where
        F: Fn(Velocity) -> f64,
    {
        let logs: Vec<f64> = mesh.velocities().iter().map(|v| log_density(*v)).collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let values = logs.iter().map(|l| (l - peak).exp()).collect();
        Self::normalized(mesh, values)
    }

    fn check_values(mesh: &Mesh, values: &[f64]) -> Result<()> {
        if values.len() != mesh.len() {
            return Err(Error::Geometry(format!(
                "{} values for a mesh of {} cells",
                values.len(),
                mesh.len()
            )));
        }
        match values.iter().position(|f| !(*f >= 0.0 && f.is_finite())) {
            Some(cell) => Err(Error::InvalidDensity { cell, value: values[cell] }),
            None => Ok(()),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.mesh.mass(&self.values)
    }

    /// `u_f = int v f / int f`.
    pub fn mean_velocity(&self) -> Velocity {
        let mass = self.mass();
        let m = self.mesh.first_moment(&self.values);
        [m[0] / mass, m[1] / mass]
    }

    /// `sum mu |f - g|`.
    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        self.mesh
            .measures()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(m, (f, g))| m * (f - g).abs())
            .sum()
    }

    /// Weighted moment `sum mu_i f_i w(v_i)`.
    pub fn moment<F: Fn(Velocity) -> f64>(&self, weight: F) -> f64 {
        self.mesh
            .measures()
            .iter()
            .zip(&self.values)
            .zip(self.mesh.velocities())
            .map(|((m, f), v)| m * f * weight(*v))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polar(dim: usize) -> Arc<Mesh> {
        Arc::new(
            Mesh::new(Geometry::Polar { dim, radius: 2.0, radial_cells: 20, angular_cells: 12 }).unwrap(),
        )
    }

    #[test]
    fn measures_add_up_to_ball_volume() {
        for dim in 2..=4 {
            let mesh = polar(dim);
            let total: f64 = mesh.measures().iter().sum();
            let ball = sphere_area(dim - 1) * 2f64.powi(dim as i32) / dim as f64;
            assert!((total - ball).abs() < 1e-12 * ball, "d={dim}");
        }
        let disk = Mesh::new(Geometry::Disk { radius: 2.0, radial_cells: 10, angular_cells: 16 }).unwrap();
        assert!((disk.measures().iter().sum::<f64>() - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn faces_fit_inside_the_band() {
        for geometry in [
            Geometry::Line { half_width: 3.0, cells: 40 },
            Geometry::Polar { dim: 3, radius: 3.0, radial_cells: 10, angular_cells: 8 },
            Geometry::Disk { radius: 3.0, radial_cells: 10, angular_cells: 8 },
        ] {
            let mesh = Mesh::new(geometry).unwrap();
            for f in mesh.faces() {
                assert!(f.lo < f.hi && f.hi - f.lo <= mesh.bandwidth());
                assert!(f.coupling > 0.0);
            }
        }
    }

    #[test]
    fn gibbs_state_is_normalized_and_isotropic() {
        let mesh = polar(2);
        let p = ModelParams::new(2, 2.0, 0.5).unwrap();
        let g = mesh.gibbs(&p, [0.0, 0.0]).unwrap();
        assert!((g.mass() - 1.0).abs() < 1e-14);
        assert!(g.mean_velocity()[0].abs() < 1e-14);
    }

    #[test]
    fn density_validation() {
        let mesh = Arc::new(Mesh::new(Geometry::Line { half_width: 1.0, cells: 4 }).unwrap());
        assert!(matches!(
            GridDensity::new(mesh.clone(), vec![0.5, -0.1, 0.1, 0.5]),
            Err(Error::InvalidDensity { cell: 1, .. })
        ));
        assert!(matches!(GridDensity::new(mesh.clone(), vec![1.0; 4]), Err(Error::NotNormalized(_))));
        assert!(matches!(GridDensity::normalized(mesh.clone(), vec![0.0; 4]), Err(Error::ZeroMass)));
        assert!(GridDensity::new(mesh, vec![0.5; 4]).is_ok());
    }

    #[test]
    fn truncation_radius_examples() {
        let p = ModelParams::new(1, 2.0, 0.8).unwrap();
        let l = truncation_radius(&p, 0.0, 1e-16);
        assert!((2.8..3.1).contains(&l), "{l}");
        let p = ModelParams::new(1, 2.0, 0.3).unwrap();
        assert!(truncation_radius(&p, 0.82, 1e-16) > truncation_radius(&p, 0.0, 1e-16));
    }

    #[test]
    fn coarsening_halves_resolution() {
        let g = Geometry::Polar { dim: 2, radius: 3.0, radial_cells: 16, angular_cells: 8 };
        assert_eq!(g.coarsened().unwrap().cell_count(), 32);
        assert_eq!(g.refined().coarsened().unwrap(), g);
        assert!(Geometry::Line { half_width: 1.0, cells: 6 }.coarsened().is_err());
    }
}
