use std::sync::Arc;

use flocking::evolution::{
    default_candidates, evolve, step, symmetric_preserving_evolve, InitialCondition, SolverConfig,
};
use flocking::functionals::{fisher_information, free_energy, Reference};
use flocking::grid::{truncation_radius, Geometry, Mesh};
use flocking::stationary::{order_parameter, StationarySettings};
use flocking::ModelParams;

#[test]
fn dissipation_matches_fisher_information_near_equilibrium() {
    let s = StationarySettings::default();
    let params = ModelParams::new(1, 2.0, 0.8).unwrap();
    let geometry = Geometry::Line { half_width: truncation_radius(&params, 0.0, 1e-16), cells: 512 };
    let mesh = Arc::new(Mesh::new(geometry).unwrap());
    let f = InitialCondition::Perturbed { order: 0.0, amplitude: 0.3 }.build(&mesh, &params, &s).unwrap();
    let dt = 1e-3;
    let next = step(&f, &params, &SolverConfig::new(geometry, dt, dt), 0.0).unwrap();
    let dissipation = -(free_energy(&next, &params).unwrap() - free_energy(&f, &params).unwrap()) / dt;
    let fisher = fisher_information(&f, &params).unwrap();
    assert!((dissipation - fisher).abs() <= 0.1 * fisher, "{dissipation} vs {fisher}");
}

#[test]
fn spatial_discretization_is_second_order() {
    let s = StationarySettings::default();
    let params = ModelParams::new(1, 2.0, 0.8).unwrap();
    let finals: Vec<[f64; 2]> = [64, 128, 256]
        .iter()
        .map(|&cells| {
            let geometry = Geometry::Line { half_width: 3.0, cells };
            let mesh = Arc::new(Mesh::new(geometry).unwrap());
            let f = InitialCondition::Gaussian { center: 0.5, variance: 0.2 }.build(&mesh, &params, &s).unwrap();
            let config = SolverConfig::new(geometry, 1e-3, 1.0);
            let trace = evolve(&f, &params, &config, &default_candidates(&mesh, &params, &s).unwrap()).unwrap();
            let row = trace.final_row();
            [row.mean_velocity[0], row.free_energy]
        })
        .collect();
    for (name, k) in [("mean velocity", 0), ("free energy", 1)] {
        let [coarse, mid, fine]: [f64; 3] = std::array::from_fn(|g| finals[g][k]);
        let order = ((coarse - mid) / (mid - fine)).abs().log2();
        assert!((1.7..2.3).contains(&order), "{name}: observed order {order}");
    }
}

#[test]
fn discrete_stationary_states_are_fixed_points_in_two_dimensions() {
    let s = StationarySettings::default();
    let params = ModelParams::new(2, 2.0, 0.25).unwrap();
    let u = order_parameter(&params, &s).unwrap().unwrap();
    let radius = truncation_radius(&params, u, 1e-16);
    for geometry in [
        Geometry::Polar { dim: 2, radius, radial_cells: 48, angular_cells: 24 },
        Geometry::Disk { radius, radial_cells: 24, angular_cells: 16 },
    ] {
        let mesh = Arc::new(Mesh::new(geometry).unwrap());
        for order in [0.0, u] {
            let f = Reference::from_order(&mesh, &params, order).unwrap().density;
            let next = step(&f, &params, &SolverConfig::new(geometry, 0.01, 0.01), 0.0).unwrap();
            let change = next.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(change <= 1e-12, "{geometry:?} u = {order}: change {change:e}");
        }
    }
}

#[test]
fn symmetric_runs_keep_the_mean_on_the_axis() {
    let s = StationarySettings::default();
    let params = ModelParams::new(2, 2.0, 0.25).unwrap();
    let u = order_parameter(&params, &s).unwrap().unwrap();
    let geometry = Geometry::Disk { radius: truncation_radius(&params, u, 1e-16), radial_cells: 32, angular_cells: 32 };
    let mesh = Arc::new(Mesh::new(geometry).unwrap());
    let f = InitialCondition::Perturbed { order: u, amplitude: 0.2 }.build(&mesh, &params, &s).unwrap();
    let config = SolverConfig::new(geometry, 0.02, 4.0);
    let trace = symmetric_preserving_evolve(&f, &params, &config, &default_candidates(&mesh, &params, &s).unwrap())
        .unwrap();
    assert!(trace.rows.iter().all(|r| r.mean_velocity[1].abs() < 1e-12));
    assert!(trace.max_free_energy_increase <= 1e-12);
    assert_eq!(trace.candidate_names[trace.limit.unwrap()], "polarized");
}

#[test]
fn shifted_data_relax_to_isotropy_above_the_critical_noise() {
    let s = StationarySettings::default();
    let params = ModelParams::new(1, 2.0, 0.8).unwrap();
    let geometry = Geometry::Line { half_width: truncation_radius(&params, 0.0, 1e-16), cells: 256 };
    let mesh = Arc::new(Mesh::new(geometry).unwrap());
    let f = InitialCondition::Gaussian { center: 0.7, variance: 0.1 }.build(&mesh, &params, &s).unwrap();
    let trace = evolve(&f, &params, &SolverConfig::new(geometry, 0.01, 30.0), &default_candidates(&mesh, &params, &s).unwrap())
        .unwrap();
    assert_eq!(trace.candidate_names[trace.limit.unwrap()], "isotropic");
    assert!(trace.final_row().mean_velocity[0].abs() < 1e-3);
    assert!(trace.max_mass_drift <= 1e-10);
    assert!(trace.lipschitz_bound.is_finite());
}
