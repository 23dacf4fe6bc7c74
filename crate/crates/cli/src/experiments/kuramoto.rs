use std::f64::consts::TAU;

use ergodic_lab_core::kuramoto::{
    distance_to_manifold, linearized_spectrum_uniform, pde_rhs, phase_diffusion_experiment, psi_function, solve_fixed_point,
    solve_pde, FourierDensity, PhaseDiffusion,
};
use ergodic_lab_core::rng::sub_seed;

use super::{linspace, RunContext};
use crate::config::ParamSpec;
use crate::error::HarnessError;
use crate::report::{Check, ReportBuilder, Table};

pub fn fixed_point_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::float("K", None, "coupling strength").range(0.0, 1e3),
        ParamSpec::float("sweep_max", Some("4"), "largest K of the bifurcation sweep").range(1.1, 1e3),
        ParamSpec::int("sweep_points", Some("40"), "points of the bifurcation sweep").range(2.0, 1e5),
    ]
}

pub fn fixed_point(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let p = ctx.params;
    let k = p.f64("K");
    let r_k = solve_fixed_point(k)?;
    let residual = (r_k - psi_function(2.0 * k * r_k)?).abs();
    let mut sweep = Table::new("sweep", &["K", "r", "residual"]);
    let mut subcritical_nonzero = 0;
    let mut decreases = 0;
    let mut prev = 0.0;
    for kk in linspace(0.0, p.f64("sweep_max"), p.usize("sweep_points")) {
        let r = solve_fixed_point(kk)?;
        let res = (r - psi_function(2.0 * kk * r)?).abs();
        if kk <= 1.0 && r != 0.0 {
            subcritical_nonzero += 1;
        }
        if r < prev {
            decreases += 1;
        }
        prev = r;
        sweep.push(vec![kk, r, res]);
    }
    // Ψ is odd with Ψ(0) = 0, so Ψ(h)/h is a centered quotient
    let h = 1e-4;
    let slope = psi_function(h)? / h;
    let mut psi = Table::new("psi", &["x", "psi"]);
    for x in linspace(0.0, 10.0, 41) {
        psi.push(vec![x, psi_function(x)?]);
    }
    let mut r = ReportBuilder::default();
    r.value("K", k);
    r.value("r", r_k);
    r.value("residual", residual);
    r.value("psi_slope_at_0", slope);
    r.check(Check::at_most("fixed-point residual", residual, 1e-10));
    r.check(Check::no_violations("r = 0 for K <= 1 on the sweep", subcritical_nonzero));
    r.check(Check::no_violations("r nondecreasing in K on the sweep", decreases));
    r.check(Check::at_most("|Psi(0)|", psi_function(0.0)?.abs(), 0.0));
    r.check(Check::at_most("|Psi'(0) - 1/2|", (slope - 0.5).abs(), 1e-6));
    r.table(sweep);
    r.table(psi);
    Ok(r)
}

pub fn spectrum_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::float("K", Some("0.5"), "coupling strength").range(0.0, 1e3),
        ParamSpec::int("modes", Some("8"), "Fourier modes").range(2.0, 1e4),
    ]
}

pub fn spectrum(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let (k, m) = (ctx.params.f64("K"), ctx.params.usize("modes"));
    let spec = linearized_spectrum_uniform(k, m)?;
    let h = 1e-7;
    let mut table = Table::new("spectrum", &["mode", "value", "multiplicity", "jacobian_cos", "jacobian_sin"]);
    let (mut worst_exact, mut worst_fd) = (0.0f64, 0.0f64);
    for e in &spec {
        let exact = if e.mode == 1 { -(1.0 - k) / 2.0 } else { -((e.mode * e.mode) as f64) / 2.0 };
        worst_exact = worst_exact.max((e.value - exact).abs());
        let mut diag = [0.0; 2];
        for (part, d) in diag.iter_mut().enumerate() {
            let mut pert = FourierDensity::uniform(m);
            if part == 0 {
                pert.a[e.mode - 1] = h;
            } else {
                pert.b[e.mode - 1] = h;
            }
            let rhs = pde_rhs(&pert, k);
            *d = if part == 0 { rhs.a[e.mode - 1] } else { rhs.b[e.mode - 1] } / h;
            worst_fd = worst_fd.max((*d - e.value).abs());
        }
        table.push(vec![e.mode as f64, e.value, e.multiplicity as f64, diag[0], diag[1]]);
    }
    let mut r = ReportBuilder::default();
    r.value("leading", spec[0].value);
    r.check(Check::at_most("eigenvalues vs -(1-K)/2 and -k^2/2", worst_exact, 0.0));
    r.check(Check::at_most("finite-difference Jacobian diagonal", worst_fd, 1e-6));
    r.table(table);
    Ok(r)
}

pub fn pde_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::float("K", Some("2"), "coupling strength above 1").range(1.0 + 1e-9, 1e3),
        ParamSpec::int("modes", Some("64"), "Fourier modes").range(8.0, 1e4),
        ParamSpec::float("dt", Some("0.01"), "time step").range(1e-6, 0.1),
        ParamSpec::float("stationary_horizon", Some("10"), "run length from the synchronized profile").range(0.0, 1e5),
        ParamSpec::float("relax_horizon", Some("50"), "run length from the perturbed uniform state").range(0.0, 1e5),
        ParamSpec::float("perturbation", Some("0.1"), "first cosine coefficient of the initial state").range(-0.159, 0.159),
    ]
}

/// Trapezoid mass on `4M` nodes, exact for a degree-`M` trigonometric polynomial.
fn quadrature_mass(p: &FourierDensity) -> f64 {
    let n = 4 * p.modes();
    (0..n).map(|j| p.eval(TAU * j as f64 / n as f64)).sum::<f64>() * TAU / n as f64
}

pub fn pde(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let p = ctx.params;
    let (k, m, dt) = (p.f64("K"), p.usize("modes"), p.f64("dt"));
    let uniform = solve_pde(&FourierDensity::uniform(m), k, 5.0, dt, 1)?;
    let uniform_drift = uniform.states.iter().flat_map(|s| s.a.iter().chain(&s.b)).fold(0.0f64, |w, v| w.max(v.abs()));
    let r_k = solve_fixed_point(k)?;
    let q = FourierDensity::stationary(k, r_k, 0.0, m);
    let stat = solve_pde(&q, k, p.f64("stationary_horizon"), dt, 10)?;
    let stat_drift = stat.states.iter().map(|s| s.l2_distance(&q)).fold(0.0f64, f64::max);
    let mut p0 = FourierDensity::uniform(m);
    p0.a[0] = p.f64("perturbation");
    let relax = solve_pde(&p0, k, p.f64("relax_horizon"), dt, (1.0 / dt).round().max(1.0) as usize)?;
    let mut table = Table::new("relaxation", &["t", "distance_to_manifold", "first_mode_amplitude", "min_density"]);
    let mut mass_err = 0.0f64;
    let mut min_density = f64::INFINITY;
    for (t, s) in relax.times.iter().zip(&relax.states) {
        let md = s.min_on_grid(4 * m);
        min_density = min_density.min(md);
        mass_err = mass_err.max((quadrature_mass(s) - 1.0).abs());
        table.push(vec![*t, distance_to_manifold(s, k)?, s.a[0].hypot(s.b[0]), md]);
    }
    for s in stat.states.iter().chain(&uniform.states) {
        mass_err = mass_err.max((quadrature_mass(s) - 1.0).abs());
    }
    let final_distance = distance_to_manifold(relax.states.last().expect("nonempty trajectory"), k)?;
    let mut r = ReportBuilder::default();
    r.value("r_K", r_k);
    r.value("stationary_drift", stat_drift);
    r.value("final_distance", final_distance);
    r.value("min_density", min_density);
    r.check(Check::at_most("uniform state invariant", uniform_drift, 0.0));
    r.check(Check::at_most("synchronized profile invariant", stat_drift, 1e-6));
    r.check(Check::at_most("perturbed uniform L2 distance to manifold at the end", final_distance, 1e-4));
    r.check(Check::at_most("mass error", mass_err, 1e-12));
    r.table(table);
    Ok(r)
}

pub fn phase_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::int("N", Some("500"), "rotators").range(2.0, 1e7),
        ParamSpec::float("K", Some("2"), "coupling strength above 1").range(1.0 + 1e-9, 1e3),
        ParamSpec::float("tau_final", Some("1"), "final rescaled time t/N").range(1e-6, 1e4),
        ParamSpec::int("n_obs", Some("10"), "observation intervals").range(2.0, 1e5),
        ParamSpec::float("dt", Some("0.01"), "Euler-Maruyama step").range(1e-6, 0.1),
        ParamSpec::int("compare_double", Some("1"), "also run 2N rotators (0 disables)").range(0.0, 1.0),
    ]
}

fn phase_table(name: &str, d: &PhaseDiffusion) -> Table {
    let mut t = Table::new(name, &["tau", "var_psi", "se"]);
    for j in 0..d.taus.len() {
        t.push(vec![d.taus[j], d.var_psi[j], d.se_var[j]]);
    }
    t
}

pub fn phase(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let p = ctx.params;
    let (n, k, tau, n_obs, dt) = (p.usize("N"), p.f64("K"), p.f64("tau_final"), p.usize("n_obs"), p.f64("dt"));
    let base = phase_diffusion_experiment(n, k, tau, n_obs, ctx.replicas, dt, ctx.seed)?;
    let mut r = ReportBuilder::default();
    r.value("slope", base.slope);
    r.value("diffusion_constant", base.slope.max(0.0).sqrt());
    r.value("r_squared", base.r_squared);
    r.value("n_used", base.n_used as f64);
    r.value("n_excluded", base.n_excluded as f64);
    r.value("near_manifold_fraction", base.near_manifold_fraction);
    r.check(Check::at_least("R^2 of Var(psi) against tau", base.r_squared, 0.9));
    r.table(phase_table("variance", &base));
    if p.usize("compare_double") == 1 {
        let double = phase_diffusion_experiment(2 * n, k, tau, n_obs, ctx.replicas, dt, sub_seed(ctx.seed, 2))?;
        let j = base.taus.len() - 1;
        let gap = (base.var_psi[j] - double.var_psi[j]).abs();
        let se = base.se_var[j].hypot(double.se_var[j]);
        r.value("var_psi_final", base.var_psi[j]);
        r.value("var_psi_final_2n", double.var_psi[j]);
        r.value("slope_2n", double.slope);
        r.check(Check::at_most("|Var_N - Var_2N| / SE at the final tau", gap / se, 2.0));
        r.table(phase_table("variance_2n", &double));
    }
    Ok(r)
}
