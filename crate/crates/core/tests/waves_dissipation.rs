//! The quantile-equation dissipation formula against a direct time
//! derivative of `W_p^p` along a finite-difference solution of the CDF
//! equation `u_t + B(u)_x = ½ A(u)_xx`.

use ergodic_lab_core::metrics::wasserstein_p_cdf;
use ergodic_lab_core::waves::{dissipation_rate, uniform_grid, FluxDiffusionSpec, Poly};
use ergodic_lab_core::GridCdf;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * x).exp())
}

struct Solver {
    x: Vec<f64>,
    dx: f64,
    flux: Poly,
    a: Poly,
}

impl Solver {
    fn step(&self, u: &mut Vec<f64>, dt: f64) {
        let n = u.len();
        let b: Vec<f64> = u.iter().map(|&v| self.flux.eval(v)).collect();
        let a: Vec<f64> = u.iter().map(|&v| self.a.eval(v)).collect();
        let mut next = u.clone();
        for i in 1..n - 1 {
            let adv = (b[i + 1] - b[i - 1]) / (2.0 * self.dx);
            let diff = (a[i + 1] - 2.0 * a[i] + a[i - 1]) / (2.0 * self.dx * self.dx);
            next[i] = u[i] + dt * (diff - adv);
        }
        *u = next;
    }

    fn cdf(&self, u: &[f64]) -> GridCdf {
        GridCdf::from_fn(self.x.clone(), |x| {
            let i = ((x - self.x[0]) / self.dx).round() as usize;
            u[i.min(u.len() - 1)]
        })
        .unwrap()
    }
}

fn check_order(p: f64) {
    let flux = Poly::new(vec![0.0, 1.0, -1.0]).unwrap();
    let sigma2 = Poly::new(vec![1.0, 1.0]).unwrap();
    let spec = FluxDiffusionSpec::new(flux.clone(), sigma2.clone()).unwrap();
    let x = uniform_grid(-20.0, 20.0, 2001);
    let solver = Solver { dx: x[1] - x[0], a: sigma2.antiderivative(), flux, x };
    let mut u: Vec<f64> = solver.x.iter().map(|&x| logistic(x)).collect();
    let mut v: Vec<f64> = solver.x.iter().map(|&x| logistic((x - 0.5) / 1.5)).collect();
    let dt = 1e-4;
    let lag = 100; // Δt = 0.01
    let mut snaps = Vec::new();
    for k in 0..=2200 {
        if k == 2000 - lag || k == 2000 || k == 2000 + lag {
            snaps.push((solver.cdf(&u), solver.cdf(&v)));
        }
        solver.step(&mut u, dt);
        solver.step(&mut v, dt);
    }
    let wpp = |(f, g): &(GridCdf, GridCdf)| wasserstein_p_cdf(f, g, p, 20_000).unwrap().powf(p);
    let fd = (wpp(&snaps[2]) - wpp(&snaps[0])) / (2.0 * lag as f64 * dt);
    let formula = dissipation_rate(&snaps[1].0, &snaps[1].1, &spec, p, 2000).unwrap();
    assert!(formula < 0.0);
    let rel = (formula / fd - 1.0).abs();
    println!("p = {p}: formula {formula:.6e}, finite difference {fd:.6e}, relative gap {rel:.3e}");
    assert!(rel < 0.05);
}

#[test]
fn dissipation_matches_time_derivative_p2() {
    check_order(2.0);
}

#[test]
fn dissipation_matches_time_derivative_p3() {
    check_order(3.0);
}
