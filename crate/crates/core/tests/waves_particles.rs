//! Particle systems started at or near a traveling wave.

use ergodic_lab_core::metrics::wasserstein_p_samples_cdf;
use ergodic_lab_core::rng::derive_stream;
use ergodic_lab_core::waves::{
    convergence_to_wave, quantile_sample, simulate_ranked_particles, solve_wave, uniform_grid, FluxDiffusionSpec, Poly,
};
use ergodic_lab_core::{EmpiricalMeasure, GridCdf};

#[test]
fn wave_law_is_stationary_in_the_moving_frame() {
    // Speed 0.3 and σ² = 1 + u/2.
    let spec = FluxDiffusionSpec::new(
        Poly::new(vec![0.0, 1.3, -1.0]).unwrap(),
        Poly::new(vec![1.0, 0.5]).unwrap(),
    )
    .unwrap();
    let wave = solve_wave(&spec, &uniform_grid(-25.0, 25.0, 5001)).unwrap();
    let n = 5000;
    let init = quantile_sample(wave.cdf(), n);
    let horizon = 5.0;
    let traj = simulate_ranked_particles(&spec, init, horizon, 0.01, 500, &mut derive_stream(11, 0)).unwrap();
    let last = EmpiricalMeasure::new(traj.snapshots.last().unwrap().clone()).unwrap();
    let target = wave.cdf().translated(spec.speed() * horizon);
    let w1 = wasserstein_p_samples_cdf(&last, &target, 1.0, 4).unwrap();
    assert!(w1 < 0.05, "W1 = {w1}");
}

#[test]
fn squeezed_logistic_relaxes_toward_the_wave() {
    let spec = FluxDiffusionSpec::logistic();
    let grid = uniform_grid(-25.0, 25.0, 5001);
    let wave = solve_wave(&spec, &grid).unwrap();
    let u0 = GridCdf::from_fn(grid, |x| 1.0 / (1.0 + (-4.0 * x).exp())).unwrap();
    let init = quantile_sample(&u0, 2000);
    let table = convergence_to_wave(&spec, &wave, &u0, init, &[1.0, 2.0], 10.0, 0.01, 100, &mut derive_stream(12, 0)).unwrap();
    let w1 = &table.distances[0];
    // ∫|φ(2x) - φ(x)| dx = ln 2 / 2 for the logistic wave.
    assert!((w1[0] - 0.5 * std::f64::consts::LN_2).abs() < 1e-3, "W1(0) = {}", w1[0]);
    assert!(table.delta.abs() < 1e-6);
    assert!(table.delta_residual.abs() < 1e-6);
    assert!(w1[w1.len() - 1] < 0.5 * w1[0]);
}
