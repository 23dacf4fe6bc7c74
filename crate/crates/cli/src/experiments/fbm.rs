use ergodic_lab_core::fbm::{
    check_lyapunov_contraction, contraction_witness, ergodicity_sample, evaluate_rt, fbm_covariance, rotation_drift, FbmGenerator,
    FsdeModel, LyapunovSpec,
};
use ergodic_lab_core::metrics::{fit_exp_rate, wasserstein_p_samples};
use ergodic_lab_core::rng::sub_seed;
use ergodic_lab_core::{run_replicas, EmpiricalMeasure};

use super::{mean_se, RunContext};
use crate::config::ParamSpec;
use crate::error::HarnessError;
use crate::report::{Check, ReportBuilder, Table};

pub fn check_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::float("H", Some("0.7"), "Hurst index").range(0.01, 0.99),
        ParamSpec::int("n_steps", Some("64"), "grid steps on [0, 1]; even").range(2.0, 1e6),
        ParamSpec::int("max_lag", Some("16"), "largest increment lag in the Hurst regression").range(2.0, 1e6),
    ]
}

/// Centered product moment with its standard error.
fn covariance(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, _) = mean_se(x);
    let (my, _) = mean_se(y);
    let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let n = z.len() as f64;
    let (m, se) = mean_se(&z);
    (m * n / (n - 1.0), se)
}

pub fn check(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let p = ctx.params;
    let (h, n) = (p.f64("H"), p.usize("n_steps"));
    if n % 2 != 0 {
        return Err(HarnessError::Validation { keys: vec!["n_steps".into()], problems: vec!["n_steps must be even".into()] });
    }
    let max_lag = p.usize("max_lag").min(n);
    let lags: Vec<usize> = (0..).map(|k| 1usize << k).take_while(|&l| l <= max_lag).collect();
    let gen = FbmGenerator::new(h, n, 1.0)?;
    // per path: B(1/2), B(1), then the sum of squared increments per lag
    let stats = run_replicas(ctx.seed, ctx.replicas, |_, rng| {
        let b = &gen.sample(1, rng).values[0];
        let mut out = vec![b[n / 2], b[n]];
        out.extend(lags.iter().map(|&l| (l..=n).map(|k| (b[k] - b[k - l]).powi(2)).sum::<f64>()));
        out
    });
    let col = |j: usize| stats.iter().map(|s| s[j]).collect::<Vec<f64>>();
    let (half, one) = (col(0), col(1));
    let mut r = ReportBuilder::default();
    let mut table = Table::new("covariance", &["s", "t", "sample", "se", "exact", "z"]);
    for (s, t, xs, ys) in [(0.5, 0.5, &half, &half), (0.5, 1.0, &half, &one), (1.0, 1.0, &one, &one)] {
        let (c, se) = covariance(xs, ys);
        let exact = fbm_covariance(h, s, t);
        let z = (c - exact) / se;
        table.push(vec![s, t, c, se, exact, z]);
        r.check(Check::at_most(format!("cov(B_{s}, B_{t}) within 3 SE"), z.abs(), 3.0));
    }
    let dt = 1.0 / n as f64;
    let mut hurst = Table::new("hurst", &["lag", "mean_sq_increment", "exact"]);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (j, &l) in lags.iter().enumerate() {
        let count = (ctx.replicas * (n - l + 1)) as f64;
        let msq = col(2 + j).iter().sum::<f64>() / count;
        hurst.push(vec![l as f64 * dt, msq, (l as f64 * dt).powf(2.0 * h)]);
        xs.push(-(l as f64 * dt).ln());
        ys.push(msq);
    }
    // log m = 2H log(l dt), fitted as a decay rate in -log(l dt)
    let fit = fit_exp_rate(&xs, &ys)?;
    let h_hat = fit.rate / 2.0;
    r.value("hurst_estimate", h_hat);
    r.value("circulant", if gen.uses_circulant() { 1.0 } else { 0.0 });
    r.check(Check::at_most("Hurst regression error", (h_hat - h).abs(), 0.02));
    r.table(table);
    r.table(hurst);
    Ok(r)
}

pub fn lyapunov_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::float("rho", Some("3"), "rotation strength").range(0.0, 1e3),
        ParamSpec::float("H", Some("0.7"), "Hurst index").range(0.51, 0.99),
        ParamSpec::float("sigma", Some("1"), "additive noise level").range(0.0, 1e3),
        ParamSpec::float("horizon", Some("10"), "final time").range(1.0, 1e4),
        ParamSpec::int("n_steps", Some("1000"), "Euler steps on [0, horizon]").range(10.0, 1e7),
        ParamSpec::int("stride", Some("50"), "record every stride-th step").range(1.0, 1e7),
        ParamSpec::list("x0", Some("2,0"), "planar starting point").range(-1e6, 1e6),
        ParamSpec::float("t_early", Some("5"), "first marginal time").range(0.0, 1e4),
        ParamSpec::list("radii", Some("1,2,5,10,20"), "start radii of the contraction fit").range(0.0, 1e6),
        ParamSpec::int("n_directions", Some("16"), "start angles per radius").range(1.0, 1e4),
        ParamSpec::int("lyapunov_paths", Some("20"), "paths per start in the contraction fit").range(1.0, 1e6),
        ParamSpec::int("lyapunov_steps", Some("200"), "Euler steps on [0, 1] in the contraction fit").range(10.0, 1e6),
        ParamSpec::float("r", Some("0.5"), "Lyapunov exponent").range(0.0, 1.0),
        ParamSpec::float("theta", Some("0.6"), "Hölder index below H").range(0.01, 0.99),
    ]
}

pub fn lyapunov(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let p = ctx.params;
    let x0 = p.list("x0");
    if x0.len() != 2 {
        return Err(HarnessError::Validation { keys: vec!["x0".into()], problems: vec!["x0 must be planar".into()] });
    }
    let drift = rotation_drift(p.f64("rho"));
    let model = FsdeModel::additive(2, drift.clone(), p.f64("sigma"));
    let big_t = p.f64("horizon");
    let gen = FbmGenerator::new(p.f64("H"), p.usize("n_steps"), big_t)?;
    let v = |x: &[f64]| 1.0 + x.iter().map(|c| c * c).sum::<f64>();
    let erg = ergodicity_sample(&model, &v, &x0, &gen, p.usize("stride"), ctx.replicas, ctx.seed)?;
    let nearest = |t: f64| (0..erg.times.len()).min_by(|&a, &b| (erg.times[a] - t).abs().total_cmp(&(erg.times[b] - t).abs())).unwrap();
    let (ke, kl) = (nearest(p.f64("t_early")), erg.times.len() - 1);
    let w1 = wasserstein_p_samples(&EmpiricalMeasure::new(erg.radii[ke].clone())?, &EmpiricalMeasure::new(erg.radii[kl].clone())?, 1.0)?;
    let sup_v = erg.mean_v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut table = Table::new("ergodicity", &["t", "mean_v", "se_v", "mean_radius"]);
    for (k, t) in erg.times.iter().enumerate() {
        let (m, _) = mean_se(&erg.radii[k]);
        table.push(vec![*t, erg.mean_v[k], erg.se_v[k], m]);
    }
    let unit = FbmGenerator::new(p.f64("H"), p.usize("lyapunov_steps"), 1.0)?;
    let spec = LyapunovSpec::quadratic(p.f64("r"), p.f64("theta"));
    let lyap = check_lyapunov_contraction(&model, &spec, &unit, &p.list("radii"), p.usize("n_directions"), p.usize("lyapunov_paths"), sub_seed(ctx.seed, 7))?;
    let (witness, _, _) = contraction_witness(&drift, 4.0, 41);
    let mut r = ReportBuilder::default();
    r.value("sup_mean_v", sup_v);
    r.value("w1_marginals", w1);
    r.value("t_early", erg.times[ke]);
    r.value("t_late", erg.times[kl]);
    r.value("rho_hat", lyap.rho_hat);
    r.value("c_hat", lyap.c_hat);
    r.value("lyapunov_violation_rate", lyap.violation_rate);
    r.value("drift_monotonicity_witness", witness);
    r.check(Check::at_most("sup E[V(X_t)] finite (below 1e6)", sup_v, 1e6));
    r.check(Check::at_most("W1 between |X| marginals", w1, 0.05));
    r.check(Check::at_most("Lyapunov rho_hat (strictly below 1)", lyap.rho_hat, 1.0 - f64::EPSILON));
    r.table(table);
    Ok(r)
}

pub fn rt_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::float("H", Some("0.7"), "Hurst index of the generic case").range(0.01, 0.99),
        ParamSpec::float("T", Some("1"), "time shift of the generic case").range(0.0, 1e4),
        ParamSpec::float("support", Some("1"), "g is supported on [-support, 0]").range(0.0, 1e4),
        ParamSpec::list("t_values", Some("0.1,0.5,1,2,5"), "evaluation points").range(1e-6, 1e6),
        ParamSpec::int("brute_n", Some("200000"), "midpoint nodes of the brute-force sum").range(10.0, 1e9),
    ]
}

pub fn rt(ctx: &RunContext) -> Result<ReportBuilder, HarnessError> {
    let p = ctx.params;
    let (h, big_t, l, n) = (p.f64("H"), p.f64("T"), p.f64("support"), p.usize("brute_n"));
    let g = |s: f64| s.exp();
    let mut table = Table::new("rt", &["t", "brownian", "closed_form", "generic", "brute_force"]);
    let (mut worst_closed, mut worst_brute) = (0.0f64, 0.0f64);
    for t in p.list("t_values") {
        // with H = 1/2, T = 0 and g = 1 on [-1, 0] the kernel integrates to log((t+1)/t)
        let bm = evaluate_rt(|_| 1.0, 1.0, 0.0, t, 0.5)?;
        let closed = ((t + 1.0) / t).ln();
        let generic = evaluate_rt(g, l, big_t, t, h)?;
        let step = l / n as f64;
        let brute = (0..n)
            .map(|i| {
                let s = -l + (i as f64 + 0.5) * step;
                t.powf(0.5 - h) * (big_t - s).powf(h - 0.5) / (t + big_t - s) * g(s)
            })
            .sum::<f64>()
            * step;
        worst_closed = worst_closed.max((bm - closed).abs());
        worst_brute = worst_brute.max((generic - brute).abs());
        table.push(vec![t, bm, closed, generic, brute]);
    }
    let mut r = ReportBuilder::default();
    r.check(Check::at_most("H = 1/2 closed form error", worst_closed, 1e-10));
    r.check(Check::at_most("generic vs brute force", worst_brute, 1e-8));
    r.table(table);
    Ok(r)
}
