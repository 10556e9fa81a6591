use std::f64::consts::PI;

use approx::assert_relative_eq;
use kslab_core::norms::{mass, second_moment, x_norm};
use kslab_core::operators::duhamel_bilinear;
use kslab_core::solver::{march_solve, march_solve_with, picard_solve, residual, MarchOptions};
use kslab_core::spectral::{forward_transform, inverse_transform};
use kslab_core::trajectory::{quadratic_time_grid, uniform_time_grid};
use kslab_core::{Error, Grid, ModelParams, RealField, Trajectory};

fn small_gaussian(n: usize) -> RealField {
    RealField::gaussian(Grid::new(2, 32.0, n).unwrap(), PI / 10.0, 1.0, [0.0, 0.0]).unwrap()
}

#[test]
fn zero_datum_is_a_fixed_point() {
    let u0 = RealField::zeros(Grid::new(2, 16.0, 32).unwrap(), 0.0);
    let (traj, report) = picard_solve(
        &u0,
        ModelParams::parabolic_elliptic(),
        &quadratic_time_grid(1.0, 8),
        1e-12,
        10,
    )
    .unwrap();
    assert!(report.converged);
    assert_eq!(report.iterations, 1);
    assert!(traj.frames().iter().all(|f| f.max_abs() == 0.0));
}

#[test]
fn small_data_contracts_and_stays_in_ball() {
    let u0 = small_gaussian(64);
    let times = quadratic_time_grid(1.0, 32);
    for tau in [0.0, 1e-2] {
        let params = ModelParams::new(tau, 0.1).unwrap();
        let (traj, report) = picard_solve(&u0, params, &times, 1e-12, 40).unwrap();
        assert!(report.converged);
        assert!(report.warnings.is_empty());
        assert!(
            report.ratios.iter().all(|&r| r > 0.0 && r < 0.5),
            "{:?}",
            report.ratios
        );
        assert!(report.residuals.windows(2).all(|w| w[1] < w[0]));
        let heat = report.iterate_norms[0];
        assert!(report.iterate_norms.iter().all(|&n| n <= 2.0 * heat));
        assert!(residual(&traj).unwrap() < 1e-12);
        let masses = traj.masses();
        for m in &masses {
            assert_relative_eq!(*m, masses[0], max_relative = 1e-8);
        }
    }
}

#[test]
fn large_data_reports_non_convergence() {
    let grid = Grid::new(2, 16.0, 64).unwrap();
    let u0 = RealField::gaussian(grid, 40.0 * PI, 0.3, [0.0, 0.0]).unwrap();
    let err = picard_solve(
        &u0,
        ModelParams::parabolic_elliptic(),
        &quadratic_time_grid(1.0, 16),
        1e-10,
        20,
    )
    .unwrap_err();
    match err {
        Error::NotConverged(report) => {
            assert!(!report.converged);
            assert!(!report.warnings.is_empty());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn linear_march_matches_heat_flow() {
    let u0 = small_gaussian(64);
    let mut opts = MarchOptions::new(1.0 / 64.0, 0.5);
    opts.nonlinear = false;
    for params in [
        ModelParams::parabolic_elliptic(),
        ModelParams::parabolic_parabolic(0.1).unwrap(),
    ] {
        let marched = march_solve_with(&u0, params, &opts).unwrap();
        let heat = Trajectory::heat_flow(&u0, params, marched.times()).unwrap();
        for (a, b) in marched.spectra().iter().zip(heat.spectra()) {
            for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
                assert!((x - y).norm() <= 1e-10);
            }
        }
    }
}

#[test]
fn picard_and_march_agree_on_small_data() {
    let u0 = small_gaussian(64);
    let params = ModelParams::parabolic_elliptic();
    let marched = march_solve(&u0, params, 1.0 / 256.0, 0.5).unwrap();
    let times = uniform_time_grid(0.5, 32);
    let (picard, _) = picard_solve(&u0, params, &times, 1e-12, 40).unwrap();
    let mut gap = 0.0f64;
    for (t, f) in picard.times().iter().zip(picard.frames()) {
        let i = marched
            .times()
            .iter()
            .position(|s| (s - t).abs() < 1e-12)
            .unwrap();
        gap = gap.max(f.axpy(-1.0, &marched.frames()[i]).unwrap().max_abs());
    }
    assert!(gap < 1e-4, "gap {gap}");
}

#[test]
fn subcritical_mass_stays_bounded() {
    let grid = Grid::new(2, 16.0, 128).unwrap();
    let u0 = RealField::gaussian(grid, 4.0 * PI, 1.0, [0.0, 0.0]).unwrap();
    let mut opts = MarchOptions::new(1.0 / 256.0, 1.0);
    opts.store_every = 16;
    let traj = march_solve_with(&u0, ModelParams::parabolic_elliptic(), &opts).unwrap();
    assert!(traj.meta.blowup_suspected_at.is_none());
    assert_eq!(*traj.times().last().unwrap(), 1.0);
    let m0 = mass(&u0);
    for f in traj.frames() {
        assert_relative_eq!(mass(f), m0, max_relative = 1e-8);
        assert!(f.max_abs() < 10.0 * u0.max_abs());
        // comparison principle
        assert!(f.values().iter().all(|&v| v >= -1e-8));
    }
}

#[test]
fn relaxed_march_conserves_mass() {
    let u0 = small_gaussian(64);
    let traj = march_solve(
        &u0,
        ModelParams::parabolic_parabolic(1e-2).unwrap(),
        1.0 / 128.0,
        1.0,
    )
    .unwrap();
    assert!(traj.chemical().is_some());
    let masses = traj.masses();
    for m in &masses {
        assert_relative_eq!(*m, masses[0], max_relative = 1e-8);
    }
}

#[test]
fn supercritical_mass_trips_guard_with_shrinking_moment() {
    let grid = Grid::new(2, 8.0, 128).unwrap();
    let u0 = RealField::gaussian(grid, 10.0 * PI, 0.3, [0.0, 0.0]).unwrap();
    let traj = march_solve(&u0, ModelParams::parabolic_elliptic(), 1e-3, 1.0).unwrap();
    let t = traj.meta.blowup_suspected_at.expect("guard should trip");
    assert!(t < 1.0);
    assert!(*traj.times().last().unwrap() < t);
    // the last stretch before the guard collapses onto the grid scale
    let moments: Vec<f64> = traj
        .times()
        .iter()
        .zip(traj.frames())
        .filter(|(s, _)| **s <= 0.9 * t)
        .map(|(_, f)| second_moment(f))
        .collect();
    assert!(moments.len() > 100);
    assert!(moments.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn march_residual_decreases_with_step() {
    let u0 = small_gaussian(64);
    let params = ModelParams::parabolic_elliptic();
    let coarse = residual(&march_solve(&u0, params, 1.0 / 16.0, 0.5).unwrap()).unwrap();
    let fine = residual(&march_solve(&u0, params, 1.0 / 32.0, 0.5).unwrap()).unwrap();
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn heat_flow_residual_is_the_bilinear_term() {
    let u0 = small_gaussian(64);
    let params = ModelParams::parabolic_elliptic();
    let heat = Trajectory::heat_flow(&u0, params, &quadratic_time_grid(1.0, 16)).unwrap();
    let b = duhamel_bilinear(&heat, &heat, 0.0).unwrap();
    let r = residual(&heat).unwrap();
    assert!(r > 0.0);
    assert_relative_eq!(r, x_norm(&b), max_relative = 1e-12);
}

#[test]
fn trajectory_binary_round_trip() {
    let u0 = small_gaussian(32);
    let params = ModelParams::parabolic_elliptic();
    let traj = march_solve(&u0, params, 0.25, 1.0).unwrap();
    let mut bytes = Vec::new();
    traj.write_binary(&mut bytes).unwrap();
    let back = Trajectory::read_binary(bytes.as_slice(), params).unwrap();
    assert_eq!(back.times(), traj.times());
    assert_eq!(back.frames(), traj.frames());
    let spec = forward_transform(&back.frames()[2]);
    assert!(
        inverse_transform(&spec)
            .axpy(-1.0, &traj.frames()[2])
            .unwrap()
            .max_abs()
            < 1e-14
    );
}
