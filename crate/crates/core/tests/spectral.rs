use std::sync::Arc;

use flocking::functionals::{project_mean_zero, q1_form, Reference};
use flocking::grid::{truncation_radius, Geometry, Mesh};
use flocking::spectrum::{assemble_linearized, spectral_report};
use flocking::stationary::{critical_noise, Branch, StationarySettings};
use flocking::ModelParams;

fn line(params: &ModelParams, cells: usize) -> Geometry {
    Geometry::Line { half_width: truncation_radius(params, 0.0, 1e-16), cells }
}

#[test]
fn poincare_constant_is_stable_under_refinement() {
    let params = ModelParams::new(1, 2.0, 0.8).unwrap();
    let lambda = |cells| {
        let mesh = Arc::new(Mesh::new(line(&params, cells)).unwrap());
        let reference = Reference::from_order(&mesh, &params, 0.0).unwrap();
        assemble_linearized(&reference, &params).unwrap().poincare_constant().unwrap()
    };
    let (coarse, fine) = (lambda(256), lambda(512));
    assert!((coarse - fine).abs() <= 5e-4 * fine, "{coarse} vs {fine}");
}

#[test]
fn coercivity_vanishes_at_the_critical_noise() {
    let s = StationarySettings::default();
    let critical = critical_noise(1, 2.0, &s).unwrap();
    let constants: Vec<f64> = [0.3, 0.1, 0.03, 0.01]
        .iter()
        .map(|eps| {
            let params = ModelParams::new(1, 2.0, critical * (1.0 + eps)).unwrap();
            spectral_report(&params, line(&params, 256), Branch::Isotropic, &s).unwrap().c_coercive_opt
        })
        .collect();
    assert!(constants.windows(2).all(|w| w[1] < w[0]), "{constants:?}");
    assert!(constants[3] < 0.01, "{constants:?}");
}

#[test]
fn q1_of_the_velocity_changes_sign_at_the_critical_noise() {
    let s = StationarySettings::default();
    for (dim, geometry_of) in [
        (1, (|p: &ModelParams| line(p, 512)) as fn(&ModelParams) -> Geometry),
        (2, |p: &ModelParams| Geometry::Polar { dim: 2, radius: truncation_radius(p, 0.0, 1e-16), radial_cells: 128, angular_cells: 8 }),
    ] {
        let critical = critical_noise(dim, 2.0, &s).unwrap();
        let mesh = Arc::new(Mesh::new(geometry_of(&ModelParams::new(dim, 2.0, 1.1 * critical).unwrap())).unwrap());
        let q1 = |noise: f64| {
            let params = ModelParams::new(dim, 2.0, noise).unwrap();
            let reference = Reference::from_order(&mesh, &params, 0.0).unwrap().density;
            let mut g: Vec<f64> = mesh.velocities().iter().map(|v| v[0]).collect();
            project_mean_zero(&mut g, &reference);
            q1_form(&g, &reference, &params).unwrap()
        };
        assert!(q1(0.99 * critical) < 0.0, "d = {dim}");
        assert!(q1(1.01 * critical) > 0.0, "d = {dim}");
    }
}

#[test]
fn polarized_reference_has_a_positive_gap() {
    let s = StationarySettings::default();
    let params = ModelParams::new(1, 2.0, 0.3).unwrap();
    let geometry = Geometry::Line { half_width: truncation_radius(&params, 0.9, 1e-16), cells: 512 };
    let report = spectral_report(&params, geometry, Branch::Polarized, &s).unwrap();
    let kappa = report.kappa.unwrap();
    assert!(kappa > 0.0 && kappa < 1.0);
    assert!(report.c_coercive_opt > 0.0);
    assert!(report.c_coercive_opt >= report.c_paper_polarized.unwrap());
    assert!(report.selfadjoint_residual <= 1e-10 && report.q2_identity_residual <= 1e-10);
}

#[test]
fn full_disk_gap_is_below_the_axisymmetric_one() {
    let s = StationarySettings::default();
    let params = ModelParams::new(2, 2.0, 0.5).unwrap();
    let radius = truncation_radius(&params, 0.0, 1e-16);
    let polar = spectral_report(&params, Geometry::Polar { dim: 2, radius, radial_cells: 48, angular_cells: 16 }, Branch::Isotropic, &s)
        .unwrap();
    let disk = spectral_report(&params, Geometry::Disk { radius, radial_cells: 24, angular_cells: 16 }, Branch::Isotropic, &s)
        .unwrap();
    assert!(disk.lambda_poincare <= polar.lambda_poincare * 1.02, "{} vs {}", disk.lambda_poincare, polar.lambda_poincare);
    assert_eq!(disk.excluded_modes, 0);
}

#[test]
fn rotation_is_the_only_null_mode_of_the_polarized_disk() {
    let s = StationarySettings::default();
    let params = ModelParams::new(2, 2.0, 0.25).unwrap();
    let geometry = Geometry::Disk { radius: truncation_radius(&params, 0.7, 1e-16), radial_cells: 24, angular_cells: 16 };
    let report = spectral_report(&params, geometry, Branch::Polarized, &s).unwrap();
    assert_eq!(report.excluded_modes, 1);
    assert!(report.c_coercive_opt > 0.0);
    assert!(report.c_axis_restricted >= report.c_coercive_opt);
}
