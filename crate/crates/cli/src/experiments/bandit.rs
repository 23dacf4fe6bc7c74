use ergodic_lab_core::bandit::{
    advance, laplace_invariant, mean_at_t, moment_system, solve_u_m, tv_experiment, wasserstein_ensemble, BanditParams,
};
use ergodic_lab_core::metrics::fit_exp_rate;
use ergodic_lab_core::run_replicas;

use super::{linspace, mean_se, RunContext};
use crate::config::ParamSpec;
use crate::error::HarnessError;
use crate::report::{Check, ReportBuilder, Table};

fn pq(default_p: &str, default_q: &str) -> Vec<ParamSpec> {
    vec![
        ParamSpec::float("p", Some(default_p), "reward probability").range(0.0, 1.0),
        ParamSpec::float("q", Some(default_q), "penalty probability").range(0.0, 1.0),
    ]
}

fn bandit(ctx: &RunContext) -> Result<BanditParams, HarnessError> {
    Ok(BanditParams::new(ctx.params.f64("p"), ctx.params.f64("q"))?)
}

pub fn w1_params() -> Vec<ParamSpec> {
    let mut v = pq("0.7", "0.3");
    v.extend([
        ParamSpec::float("y0", Some("0"), "start of the lower copy").range(0.0, 1e6),
        ParamSpec::float("y0_tilde", Some("2"), "start of the upper copy").range(0.0, 1e6),
        ParamSpec::float("horizon", Some("10"), "final time").range(1e-6, 1e6),
        ParamSpec::int("n_times", Some("21"), "observation times on [0, horizon]").range(3.0, 1e6),
    ]);
    v
}

pub fn w1(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let bp = bandit(ctx)?;
    let p = ctx.params;
    let (y0, y1) = (p.f64("y0"), p.f64("y0_tilde"));
    let times = linspace(0.0, p.f64("horizon"), p.usize("n_times"));
    let ens = wasserstein_ensemble(&bp, |_| y0, |_| y1, &times, ctx.replicas, ctx.seed)?;
    let target = bp.p() - bp.q();
    let mut table = Table::new("w1", &["t", "w1", "se", "mean_y", "mean_y_tilde", "exact_mean_gap"]);
    for m in &ens.moments {
        table.push(vec![m.t, m.mean_abs_diff, m.se_abs_diff, m.mean_y, m.mean_y_tilde, (y1 - y0).abs() * (-target * m.t).exp()]);
    }
    let w: Vec<f64> = ens.moments.iter().map(|m| m.mean_abs_diff).collect();
    let se: Vec<f64> = ens.moments.iter().map(|m| m.se_abs_diff).collect();
    let fit = fit_exp_rate(&times, &w)?;
    let rises = (1..w.len()).filter(|&k| w[k] > w[k - 1] + 2.0 * se[k].hypot(se[k - 1])).count();
    let mut r = ReportBuilder::default();
    r.value("rate", fit.rate);
    r.value("target_rate", target);
    r.value("r_squared", fit.r_squared);
    r.value("n_pairs", ens.n_pairs as f64);
    r.check(Check::at_most("rate relative error", (fit.rate - target).abs() / target, 0.10));
    r.check(Check::no_violations("ordering preserved", ens.sign_flips));
    r.check(Check::no_violations("w1 nonincreasing within 2 SE", rises));
    r.table(table);
    Ok(r)
}

pub fn mean_params() -> Vec<ParamSpec> {
    let mut v = pq("0.7", "0.3");
    v.extend([
        ParamSpec::float("y0", Some("0"), "initial state").range(0.0, 1e6),
        ParamSpec::list("times", Some("1,2,5"), "observation times").range(0.0, 1e6),
    ]);
    v
}

pub fn mean(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let bp = bandit(ctx)?;
    let y0 = ctx.params.f64("y0");
    let mut times = ctx.params.list("times");
    times.sort_by(f64::total_cmp);
    let runs = run_replicas(ctx.seed, ctx.replicas, |_, rng| {
        let (mut y, mut t) = (y0, 0.0);
        times
            .iter()
            .map(|&s| {
                y = advance(y, s - t, &bp, rng);
                t = s;
                y
            })
            .collect::<Vec<f64>>()
    });
    let mut table = Table::new("mean", &["t", "mc_mean", "se", "closed_form", "z"]);
    let mut r = ReportBuilder::default();
    for (j, &t) in times.iter().enumerate() {
        let xs: Vec<f64> = runs.iter().map(|v| v[j]).collect();
        let (m, se) = mean_se(&xs);
        let exact = mean_at_t(&bp, y0, t);
        let z = (m - exact) / se;
        table.push(vec![t, m, se, exact, z]);
        r.check(Check::at_most(format!("|mc - closed form| / SE at t = {t}"), z.abs(), 3.0));
    }
    r.value("stationary_mean", bp.stationary_mean());
    r.table(table);
    Ok(r)
}

pub fn laplace_params() -> Vec<ParamSpec> {
    let mut v = pq("0.6", "0.3");
    v.extend([
        ParamSpec::float("burn_in", Some("40"), "simulation time before sampling").range(0.0, 1e6),
        ParamSpec::float("u_fraction", Some("0.5"), "test point as a fraction of u_M").range(0.0, 0.99),
        ParamSpec::int("n_grid", Some("20"), "points of the log-Laplace table").range(2.0, 1e5),
    ]);
    v
}

pub fn laplace(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let bp = bandit(ctx)?;
    let p = ctx.params;
    let u_m = solve_u_m(&bp)?;
    let residual = u_m.exp_m1() / u_m - bp.p() / bp.q();
    let u = p.f64("u_fraction") * u_m;
    let ode = laplace_invariant(&bp, &[u])?[0].exp();
    let (burn, y_start) = (p.f64("burn_in"), bp.stationary_mean());
    let samples = run_replicas(ctx.seed, ctx.replicas, |_, rng| (u * advance(y_start, burn, &bp, rng)).exp());
    let (mc, se) = mean_se(&samples);
    let grid = linspace(0.0, 0.95 * u_m, p.usize("n_grid"));
    let logs = laplace_invariant(&bp, &grid)?;
    let mut table = Table::new("laplace", &["u", "log_psi"]);
    for (x, l) in grid.iter().zip(&logs) {
        table.push(vec![*x, *l]);
    }
    let mut r = ReportBuilder::default();
    r.value("u_m", u_m);
    r.value("u_m_residual", residual);
    r.value("u", u);
    r.value("psi_ode", ode);
    r.value("psi_mc", mc);
    r.value("psi_mc_se", se);
    r.check(Check::at_most("u_M residual", residual.abs(), 1e-12));
    r.check(Check::at_most("Laplace MC vs ODE relative gap", (mc / ode - 1.0).abs(), 0.05));
    r.table(table);
    Ok(r)
}

pub fn tv_params() -> Vec<ParamSpec> {
    let mut v = pq("0.7", "0.3");
    v.extend([
        ParamSpec::float("y0", Some("0"), "start of the first copy").range(0.0, 1e6),
        ParamSpec::float("y0_tilde", Some("1"), "start of the second copy").range(0.0, 1e6),
        ParamSpec::float("horizon", Some("40"), "final time").range(1e-6, 1e6),
        ParamSpec::float("alpha", Some("0"), "switch fraction; 0 selects the rate-optimal value").range(0.0, 0.999),
        ParamSpec::int("n_points", Some("161"), "points of the survival curve").range(3.0, 1e6),
        ParamSpec::int("min_survivors", Some("50"), "smallest surviving count used in the rate fit").range(1.0, 1e9),
    ]);
    v
}

pub fn tv(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let bp = bandit(ctx)?;
    let p = ctx.params;
    let alpha = match p.f64("alpha") {
        a if a > 0.0 => a,
        _ => bp.optimal_switch_fraction(),
    };
    let (y0, y1) = (p.f64("y0"), p.f64("y0_tilde"));
    let curve = tv_experiment(&bp, |_| y0, |_| y1, p.f64("horizon"), alpha, ctx.replicas, p.usize("n_points"), ctx.seed)?;
    let floor = p.usize("min_survivors") as f64 / curve.n_pairs as f64;
    let (ft, fs): (Vec<f64>, Vec<f64>) = curve
        .times
        .iter()
        .zip(&curve.survival)
        .filter(|(t, s)| **t >= curve.switch_time && **s >= floor)
        .map(|(t, s)| (*t, *s))
        .unzip();
    let (rate, r2) = match fit_exp_rate(&ft, &fs) {
        Ok(f) => (f.rate, f.r_squared),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let rises = curve.survival.windows(2).filter(|w| w[1] > w[0]).count();
    let v = bp.tv_rate_bound();
    let mut table = Table::new("survival", &["t", "survival"]);
    for (t, s) in curve.times.iter().zip(&curve.survival) {
        table.push(vec![*t, *s]);
    }
    let mut r = ReportBuilder::default();
    r.value("v", v);
    r.value("alpha", alpha);
    r.value("switch_time", curve.switch_time);
    r.value("rate", rate);
    r.value("r_squared", r2);
    r.value("n_fit_points", ft.len() as f64);
    r.check(Check::at_least("fitted rate / v", rate / v, 0.9));
    r.check(Check::no_violations("survival nonincreasing", rises));
    r.table(table);
    Ok(r)
}

pub fn moments_params() -> Vec<ParamSpec> {
    let mut v = pq("0.7", "0.3");
    v.extend([
        ParamSpec::float("y0", Some("2"), "start of the upper copy").range(0.0, 1e6),
        ParamSpec::float("y0_tilde", Some("0"), "start of the lower copy").range(0.0, 1e6),
        ParamSpec::float("horizon", Some("5"), "final time").range(1e-6, 1e4),
        ParamSpec::int("n_times", Some("11"), "observation times on [0, horizon]").range(2.0, 1e5),
        ParamSpec::int("n_max", Some("4"), "highest moment order").range(2.0, 30.0),
        ParamSpec::float("dt", Some("0.001"), "RK4 step").range(1e-7, 0.1),
    ]);
    v
}

pub fn moments(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let bp = bandit(ctx)?;
    let p = ctx.params;
    let (y0, y1) = (p.f64("y0"), p.f64("y0_tilde"));
    let d0 = (y0 - y1).abs();
    let dt = p.f64("dt");
    let h_init: Vec<f64> = (1..=p.usize("n_max")).map(|k| d0.powi(k as i32)).collect();
    let times = linspace(0.0, p.f64("horizon"), p.usize("n_times"));
    let (ode_t, rows) = moment_system(&bp, &h_init, p.f64("horizon"), dt)?;
    let ens = wasserstein_ensemble(&bp, |_| y0, |_| y1, &times, ctx.replicas, ctx.seed)?;
    let mut table = Table::new("moments", &["t", "h1_ode", "h1_mc", "h1_se", "h2_ode", "h2_mc", "h2_se"]);
    let (mut worst1, mut worst2) = (0.0f64, 0.0f64);
    for m in &ens.moments {
        let j = ode_t.partition_point(|&s| s < m.t - 0.5 * dt).min(rows.len() - 1);
        let (h1, h2) = (rows[j][0], rows[j][1]);
        worst1 = worst1.max((m.mean_abs_diff / h1 - 1.0).abs());
        worst2 = worst2.max((m.mean_sq_diff / h2 - 1.0).abs());
        table.push(vec![m.t, h1, m.mean_abs_diff, m.se_abs_diff, h2, m.mean_sq_diff, m.se_sq_diff]);
    }
    let mut r = ReportBuilder::default();
    r.value("max_rel_error_h1", worst1);
    r.value("max_rel_error_h2", worst2);
    r.check(Check::at_most("h2 ODE vs MC max relative error", worst2, 0.05));
    r.check(Check::at_most("h1 ODE vs MC max relative error", worst1, 0.05));
    r.table(table);
    Ok(r)
}
