//! The penalized two-armed bandit as a piecewise deterministic Markov process.
//!
//! In the translated coordinate `Y = X - (1-p)/p` the state decays along
//! `y' = -p y` and jumps by `+1` at rate `zeta(y) = q (y + (1-p)/p)`.
//! Two couplings are provided: the monotone simultaneous-jump coupling, which
//! contracts `E|Y - Ỹ|` at rate `p - q`, and a coalescent coupling that
//! delays one jump so both copies land on the same point.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::numeric::{integrate, integrate_to_infinity, rk4_step};
use crate::rng::{run_replicas, Stream};

/// Reward and penalty probabilities, `0 < q < p < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BanditParams {
    p: f64,
    q: f64,
}

impl BanditParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(0.0 < q && q < p && p < 1.0) {
            return Err(domain(format!("need 0 < q < p < 1, got p = {p}, q = {q}")));
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// The offset `(1-p)/p` between the original and translated coordinates.
    pub fn offset(&self) -> f64 {
        (1.0 - self.p) / self.p
    }

    /// Jump rate `zeta(y)`.
    pub fn jump_rate(&self, y: f64) -> f64 {
        self.q * (y + self.offset())
    }

    /// Long-run mean `q(1-p) / (p(p-q))` of `Y`.
    pub fn stationary_mean(&self) -> f64 {
        self.q * (1.0 - self.p) / (self.p * (self.p - self.q))
    }

    /// Guaranteed total-variation decay rate `v`.
    pub fn tv_rate_bound(&self) -> f64 {
        let (p, q) = (self.p, self.q);
        (p - q) / (2.0 + p * (p - q) / (q * (1.0 - p)))
    }

    /// Switch fraction `alpha` that optimizes the rate `v`.
    pub fn optimal_switch_fraction(&self) -> f64 {
        let (p, q) = (self.p, self.q);
        1.0 / (1.0 + p * (p - q) / (2.0 * q * (1.0 - p)))
    }

    /// Cumulative intensity `Λ(t)` of the first jump from `y`.
    pub fn cumulative_intensity(&self, y: f64, t: f64) -> f64 {
        let decay = -(-self.p * t).exp_m1();
        self.q * (y / self.p * decay + self.offset() * t)
    }
}

/// Deterministic flow `y e^{-p dt}`.
pub fn flow(y: f64, dt: f64, params: &BanditParams) -> f64 {
    y * (-params.p * dt).exp()
}

/// Time to the next jump from `y` given a unit-exponential draw `e`.
///
/// `Λ` is concave and increasing, so Newton started at zero climbs
/// monotonically to the root; bisection takes over if rounding stalls it.
pub fn next_jump_time(y: f64, params: &BanditParams, e: f64) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    let (p, q) = (params.p, params.q);
    let floor_rate = q * params.offset();
    let (mut lo, mut hi) = (0.0, e / floor_rate);
    let mut t = 0.0f64;
    for _ in 0..100 {
        let residual = params.cumulative_intensity(y, t) - e;
        if residual.abs() <= 1e-13 * e.max(1.0) {
            return t;
        }
        if residual < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let slope = q * (y * (-p * t).exp() + params.offset());
        let next = t - residual / slope;
        t = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    t
}

/// A simulated path: event times and the post-event states, starting with
/// `(0, y0)` and ending with the state at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditPath {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl BanditPath {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64, params: &BanditParams) -> f64 {
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        flow(self.states[k], t - self.times[k], params)
    }
}

/// Exact simulation on `[0, horizon]`.
pub fn simulate_path(params: &BanditParams, y0: f64, horizon: f64, rng: &mut Stream) -> Result<BanditPath> {
    if !(horizon > 0.0) {
        return Err(domain(format!("horizon must be positive, got {horizon}")));
    }
    if !(y0 >= 0.0) {
        return Err(domain(format!("state must be nonnegative, got {y0}")));
    }
    let mut times = vec![0.0];
    let mut states = vec![y0];
    let (mut t, mut y) = (0.0, y0);
    loop {
        let dt = next_jump_time(y, params, Exp1.sample(rng));
        if t + dt > horizon {
            times.push(horizon);
            states.push(flow(y, horizon - t, params));
            return Ok(BanditPath { times, states });
        }
        t += dt;
        y = flow(y, dt, params) + 1.0;
        times.push(t);
        states.push(y);
    }
}

/// Advances a single copy from `y` over `dt` and returns the new state.
pub fn advance(y: f64, dt: f64, params: &BanditParams, rng: &mut Stream) -> f64 {
    let (mut t, mut y) = (0.0, y);
    loop {
        let step = next_jump_time(y, params, Exp1.sample(rng));
        if t + step > dt {
            return flow(y, dt - t, params);
        }
        t += step;
        y = flow(y, step, params) + 1.0;
    }
}

/// Closed-form mean `E[Y_t]` started from mean `m0`.
pub fn mean_at_t(params: &BanditParams, m0: f64, t: f64) -> f64 {
    let m = params.stationary_mean();
    m + (m0 - m) * (-(params.p - params.q) * t).exp()
}

/// Two copies of the process under a coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledBanditPair {
    pub y: f64,
    pub y_tilde: f64,
    /// Current time of the pair.
    pub t: f64,
    pub coalesced: bool,
    /// Coalescence time, `f64::INFINITY` while the copies differ.
    pub tau: f64,
}

impl CoupledBanditPair {
    pub fn new(y: f64, y_tilde: f64) -> Self {
        let coalesced = y == y_tilde;
        Self {
            y,
            y_tilde,
            t: 0.0,
            coalesced,
            tau: if coalesced { 0.0 } else { f64::INFINITY },
        }
    }
}

/// One event of the monotone coupling: the upper copy jumps at its own rate,
/// and the lower copy joins with probability `zeta(lower) / zeta(upper)`.
///
/// If `until` comes first, both copies flow to `until` and no jump occurs.
fn wasserstein_event(pair: &mut CoupledBanditPair, params: &BanditParams, until: f64, rng: &mut Stream) -> bool {
    let (hi, lo) = if pair.y >= pair.y_tilde { (pair.y, pair.y_tilde) } else { (pair.y_tilde, pair.y) };
    let dt = next_jump_time(hi, params, Exp1.sample(rng));
    if pair.t + dt > until {
        let rest = until - pair.t;
        pair.y = flow(pair.y, rest, params);
        pair.y_tilde = flow(pair.y_tilde, rest, params);
        pair.t = until;
        return false;
    }
    let (hi_pre, lo_pre) = (flow(hi, dt, params), flow(lo, dt, params));
    let both = rng.random::<f64>() * params.jump_rate(hi_pre) < params.jump_rate(lo_pre);
    let (hi_new, lo_new) = (hi_pre + 1.0, if both { lo_pre + 1.0 } else { lo_pre });
    if pair.y >= pair.y_tilde {
        pair.y = hi_new;
        pair.y_tilde = lo_new;
    } else {
        pair.y_tilde = hi_new;
        pair.y = lo_new;
    }
    if pair.coalesced {
        pair.y_tilde = pair.y;
    }
    pair.t += dt;
    true
}

/// Advances the pair to its next jump under the monotone coupling.
pub fn couple_wasserstein_step(pair: &mut CoupledBanditPair, params: &BanditParams, rng: &mut Stream) {
    wasserstein_event(pair, params, f64::INFINITY, rng);
}

/// Runs the monotone coupling up to time `until`.
pub fn couple_wasserstein_until(pair: &mut CoupledBanditPair, params: &BanditParams, until: f64, rng: &mut Stream) {
    while pair.t < until && wasserstein_event(pair, params, until, rng) {}
}

/// Triangular moment system for `h_n(t) = E|Y_t - Ỹ_t|^n` under the monotone
/// coupling, integrated with classical RK4 at step `dt`.
///
/// Row `j` holds `(h_1, ..., h_{n_max})` at time `j * dt` (last row at `horizon`).
pub fn moment_system(params: &BanditParams, h_init: &[f64], horizon: f64, dt: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n_max = h_init.len();
    if n_max == 0 {
        return Err(domain("moment system needs at least one order"));
    }
    if !(dt > 0.0 && horizon >= 0.0) {
        return Err(domain("need dt > 0 and horizon >= 0"));
    }
    let (p, q) = (params.p, params.q);
    let binom = binomial_table(n_max);
    let rhs = |_: f64, h: &[f64], out: &mut [f64]| {
        for n in 1..=n_max {
            let mut s = 0.0;
            for k in 0..n.saturating_sub(1) {
                s += binom[n][k] * h[k];
            }
            out[n - 1] = -(n as f64) * (p - q) * h[n - 1] + q * s;
        }
    };
    let steps = (horizon / dt).ceil() as usize;
    let mut times = vec![0.0];
    let mut rows = vec![h_init.to_vec()];
    let mut h = h_init.to_vec();
    let mut next = vec![0.0; n_max];
    let mut t = 0.0;
    for j in 1..=steps {
        let target = (j as f64 * dt).min(horizon);
        rk4_step(&rhs, t, &h, target - t, &mut next);
        std::mem::swap(&mut h, &mut next);
        t = target;
        times.push(t);
        rows.push(h.clone());
    }
    Ok((times, rows))
}

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..=n {
        c[i][0] = 1.0;
        for k in 1..=i {
            c[i][k] = c[i - 1][k - 1] + if k < i { c[i - 1][k] } else { 0.0 };
        }
    }
    c
}

/// `expm1(u) / u`, continuous at zero.
fn expm1_ratio(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 + 0.5 * u
    } else {
        u.exp_m1() / u
    }
}

/// Largest exponential moment order: the positive root of `(e^u - 1)/u = p/q`.
pub fn solve_u_m(params: &BanditParams) -> Result<f64> {
    let target = params.p / params.q;
    let f = |u: f64| expm1_ratio(u) - target;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = if f(lo).abs() < f(hi).abs() { lo } else { hi };
    if f(root).abs() > 1e-12 {
        return Err(Error::Solver(format!("u_M residual {} too large", f(root))));
    }
    Ok(root)
}

/// `d/du log ψ(u)` for the invariant Laplace transform `ψ(u) = E[e^{uY}]`.
fn laplace_log_derivative(params: &BanditParams, u: f64) -> f64 {
    let (p, q) = (params.p, params.q);
    let r = expm1_ratio(u);
    q * params.offset() * r / (p - q * r)
}

/// `log ψ(u)` of the invariant law for each `u` in `u_grid`.
pub fn laplace_invariant(params: &BanditParams, u_grid: &[f64]) -> Result<Vec<f64>> {
    let u_m = solve_u_m(params)?;
    u_grid
        .iter()
        .map(|&u| {
            if !(u < u_m) {
                return Err(Error::Singularity(format!("u = {u} is not below u_M = {u_m}")));
            }
            Ok(integrate(|v| laplace_log_derivative(params, v), 0.0, u, 1e-14, 1e-13)?.value)
        })
        .collect()
}

/// Survival function `Φ_y(s, ε)` of `S = (1/p) log(ε + e^{p T̃})`, where `T̃`
/// is the first jump time from `y + ε`. With `ε = 0` this is the survival of
/// the first jump from `y`.
pub fn coalescent_survival(params: &BanditParams, y: f64, eps: f64, s: f64) -> f64 {
    let p = params.p;
    let base = (p * s).exp() - eps;
    if base <= 1.0 {
        return 1.0;
    }
    let expo = params.offset() * base.ln() + (y + eps) * (1.0 - 1.0 / base);
    (-(params.q / p) * expo).exp()
}

/// Density `f_y(s, ε)` of `S`; zero below `(1/p) log(1 + ε)`.
pub fn coalescent_density(params: &BanditParams, y: f64, eps: f64, s: f64) -> f64 {
    let p = params.p;
    let e = (p * s).exp();
    let base = e - eps;
    if base < 1.0 {
        return 0.0;
    }
    params.q * e / p * ((1.0 - p) / base + p * (y + eps) / (base * base)) * coalescent_survival(params, y, eps, s)
}

/// Earliest possible value of `S`.
pub fn coalescent_support_start(params: &BanditParams, eps: f64) -> f64 {
    eps.ln_1p() / params.p
}

/// `∫_0^t min(f_y(·,0), f_y(·,ε))`: the probability that the maximal
/// coupling makes both copies jump onto each other before `t`.
pub fn overlap_probability(params: &BanditParams, y: f64, eps: f64, t: f64) -> Result<f64> {
    let s0 = coalescent_support_start(params, eps).min(t);
    let q = integrate(
        |s| coalescent_density(params, y, 0.0, s).min(coalescent_density(params, y, eps, s)),
        s0,
        t,
        1e-12,
        1e-10,
    )?;
    Ok(q.value)
}

/// Lower bound `1 - ½(Φ_y(t,0) + Φ_y(t,ε) + ∫_0^t |f_y(·,0) - f_y(·,ε)|)` on
/// the coupling success probability before `t`.
pub fn tv1_lower_bound(params: &BanditParams, y: f64, eps: f64, t: f64) -> Result<f64> {
    let s0 = coalescent_support_start(params, eps).min(t);
    let head = integrate(|s| coalescent_density(params, y, 0.0, s), 0.0, s0, 1e-12, 1e-10)?.value;
    let body = integrate(
        |s| (coalescent_density(params, y, 0.0, s) - coalescent_density(params, y, eps, s)).abs(),
        s0,
        t,
        1e-12,
        1e-10,
    )?;
    Ok(1.0
        - 0.5
            * (coalescent_survival(params, y, 0.0, t) + coalescent_survival(params, y, eps, t) + head + body.value))
}

/// Total mass of `f_y(·, ε)` on `[0, ∞)`.
pub fn coalescent_density_mass(params: &BanditParams, y: f64, eps: f64) -> Result<f64> {
    let s0 = coalescent_support_start(params, eps);
    Ok(integrate_to_infinity(|s| coalescent_density(params, y, eps, s), s0, 1e-13, 1e-12)?.value)
}

/// Draws `(T, S)` from the maximal coupling of the first jump `T` from `y`
/// and `S = (1/p) log(ε + e^{p T̃})` with `T̃` the first jump from `y + ε`.
///
/// Rejection construction: a draw of `T` is kept as a common value with
/// probability `min(1, f_ε/f_0)`; otherwise `S` is drawn from the residual
/// `(f_ε - f_0)^+` by rejection.
pub fn maximal_coupling_first_jumps(params: &BanditParams, y: f64, eps: f64, rng: &mut Stream) -> (f64, f64) {
    let t = next_jump_time(y, params, Exp1.sample(rng));
    let f0 = coalescent_density(params, y, 0.0, t);
    if rng.random::<f64>() * f0 <= coalescent_density(params, y, eps, t) {
        return (t, t);
    }
    loop {
        let t_tilde = next_jump_time(y + eps, params, Exp1.sample(rng));
        let s = (eps + (params.p * t_tilde).exp()).ln() / params.p;
        let fe = coalescent_density(params, y, eps, s);
        if rng.random::<f64>() * fe > coalescent_density(params, y, 0.0, s) {
            return (t, s);
        }
    }
}

/// One coalescent attempt from the pair's current time.
///
/// On success both copies sit at the same point at time `T` and the pair is
/// marked coalesced. On failure both copies are moved independently to a
/// common time so that a further attempt can start.
pub fn couple_coalescent(pair: &mut CoupledBanditPair, params: &BanditParams, rng: &mut Stream) {
    if pair.coalesced {
        return;
    }
    let swapped = pair.y > pair.y_tilde;
    let (y, upper) = if swapped { (pair.y_tilde, pair.y) } else { (pair.y, pair.y_tilde) };
    let eps = upper - y;
    let p = params.p;
    let (t_low, s) = maximal_coupling_first_jumps(params, y, eps, rng);
    let t_up = s + (-eps * (-p * s).exp()).ln_1p() / p;
    let upper_jumped = flow(upper, t_up, params) + 1.0;
    let upper_next = t_up + next_jump_time(upper_jumped, params, Exp1.sample(rng));
    let low_new = flow(y, t_low, params) + 1.0;

    if t_low == s && upper_next > t_low {
        pair.t += t_low;
        pair.y = low_new;
        pair.y_tilde = low_new;
        pair.coalesced = true;
        pair.tau = pair.t;
        return;
    }

    let common = t_low.max(t_up);
    let low_at = advance(low_new, common - t_low, params, rng);
    let up_at = if upper_next > common {
        flow(upper_jumped, common - t_up, params)
    } else {
        let after = flow(upper_jumped, upper_next - t_up, params) + 1.0;
        advance(after, common - upper_next, params, rng)
    };
    pair.t += common;
    if swapped {
        pair.y = up_at;
        pair.y_tilde = low_at;
    } else {
        pair.y = low_at;
        pair.y_tilde = up_at;
    }
    if pair.y == pair.y_tilde {
        pair.coalesced = true;
        pair.tau = pair.t;
    }
}

/// Empirical survival curve of the coalescence time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub n_pairs: usize,
    /// Time at which the coalescent phase starts.
    pub switch_time: f64,
}

/// Monotone coupling on `[0, αT]`, then repeated coalescent attempts until
/// `T`; returns `P(τ > t)` on `n_points` equally spaced times in `[0, T]`.
#[allow(clippy::too_many_arguments)]
pub fn tv_experiment<F, G>(
    params: &BanditParams,
    mu0: F,
    nu0: G,
    horizon: f64,
    switch_fraction: f64,
    n_pairs: usize,
    n_points: usize,
    seed: u64,
) -> Result<SurvivalCurve>
where
    F: Fn(&mut Stream) -> f64 + Sync + Send,
    G: Fn(&mut Stream) -> f64 + Sync + Send,
{
    if !(switch_fraction > 0.0 && switch_fraction < 1.0) {
        return Err(domain(format!("switch fraction must lie in (0, 1), got {switch_fraction}")));
    }
    if !(horizon > 0.0) || n_points < 2 || n_pairs == 0 {
        return Err(domain("need a positive horizon, at least two points and one pair"));
    }
    let switch_time = switch_fraction * horizon;
    let taus = run_replicas(seed, n_pairs, |_, rng| {
        let mut pair = CoupledBanditPair::new(mu0(rng), nu0(rng));
        couple_wasserstein_until(&mut pair, params, switch_time, rng);
        while !pair.coalesced && pair.t < horizon {
            couple_coalescent(&mut pair, params, rng);
        }
        pair.tau
    });
    let times: Vec<f64> = (0..n_points).map(|i| horizon * i as f64 / (n_points - 1) as f64).collect();
    let mut sorted = taus;
    sorted.sort_by(f64::total_cmp);
    let survival = times
        .iter()
        .map(|&t| {
            let done = sorted.partition_point(|&tau| tau <= t);
            (n_pairs - done) as f64 / n_pairs as f64
        })
        .collect();
    Ok(SurvivalCurve { times, survival, n_pairs, switch_time })
}

/// Summary of a coupled ensemble at one observation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledMoments {
    pub t: f64,
    pub mean_abs_diff: f64,
    pub se_abs_diff: f64,
    pub mean_sq_diff: f64,
    pub se_sq_diff: f64,
    pub mean_y: f64,
    pub se_y: f64,
    pub mean_y_tilde: f64,
    pub se_y_tilde: f64,
}

/// Result of running many pairs under the monotone coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledEnsemble {
    pub moments: Vec<CoupledMoments>,
    /// Number of pairs whose ordering flipped at some observation.
    pub sign_flips: usize,
    pub n_pairs: usize,
}

/// Runs `n_pairs` monotone-coupled pairs and summarizes them at `times`.
pub fn wasserstein_ensemble<F, G>(
    params: &BanditParams,
    mu0: F,
    nu0: G,
    times: &[f64],
    n_pairs: usize,
    seed: u64,
) -> Result<CoupledEnsemble>
where
    F: Fn(&mut Stream) -> f64 + Sync + Send,
    G: Fn(&mut Stream) -> f64 + Sync + Send,
{
    if n_pairs < 2 {
        return Err(domain("need at least two pairs"));
    }
    if times.windows(2).any(|w| w[0] > w[1]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(domain("observation times must be nonnegative and sorted"));
    }
    let runs = run_replicas(seed, n_pairs, |_, rng| {
        let mut pair = CoupledBanditPair::new(mu0(rng), nu0(rng));
        let sign0 = (pair.y - pair.y_tilde).signum();
        let mut flipped = false;
        let obs: Vec<(f64, f64)> = times
            .iter()
            .map(|&t| {
                couple_wasserstein_until(&mut pair, params, t, rng);
                if (pair.y - pair.y_tilde) * sign0 < 0.0 {
                    flipped = true;
                }
                (pair.y, pair.y_tilde)
            })
            .collect();
        (obs, flipped)
    });
    let n = n_pairs as f64;
    let stats = |v: &mut dyn Iterator<Item = f64>| {
        let (mut s, mut s2) = (0.0, 0.0);
        for x in v {
            s += x;
            s2 += x * x;
        }
        let mean = s / n;
        let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    };
    let moments = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (mean_abs_diff, se_abs_diff) = stats(&mut runs.iter().map(|(o, _)| (o[j].0 - o[j].1).abs()));
            let (mean_sq_diff, se_sq_diff) = stats(&mut runs.iter().map(|(o, _)| (o[j].0 - o[j].1).powi(2)));
            let (mean_y, se_y) = stats(&mut runs.iter().map(|(o, _)| o[j].0));
            let (mean_y_tilde, se_y_tilde) = stats(&mut runs.iter().map(|(o, _)| o[j].1));
            CoupledMoments { t, mean_abs_diff, se_abs_diff, mean_sq_diff, se_sq_diff, mean_y, se_y, mean_y_tilde, se_y_tilde }
        })
        .collect();
    let sign_flips = runs.iter().filter(|(_, f)| *f).count();
    Ok(CoupledEnsemble { moments, sign_flips, n_pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn params() -> BanditParams {
        BanditParams::new(0.7, 0.3).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        for (p, q) in [(0.3, 0.7), (0.5, 0.5), (1.0, 0.3), (0.7, 0.0)] {
            assert!(BanditParams::new(p, q).is_err());
        }
    }

    #[test]
    fn flow_examples() {
        let pr = BanditParams { p: 1.0, q: 0.5 };
        assert_abs_diff_eq!(flow(2.0, 2f64.ln(), &pr), 1.0, epsilon = 1e-15);
        assert_eq!(flow(3.3, 0.0, &params()), 3.3);
        let a = flow(flow(1.7, 0.4, &params()), 1.3, &params());
        assert_abs_diff_eq!(a, flow(1.7, 1.7, &params()), epsilon = 1e-14);
    }

    #[test]
    fn jump_time_examples() {
        let pr = params();
        assert_eq!(next_jump_time(1.0, &pr, 0.0), 0.0);
        let e = 1e-6;
        let lin = e * pr.p / (pr.q * (1.0 - pr.p));
        assert_abs_diff_eq!(next_jump_time(0.0, &pr, e) / lin, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn stationary_constants() {
        let pr = params();
        assert_abs_diff_eq!(pr.stationary_mean(), 9.0 / 28.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mean_at_t(&pr, 2.0, 0.0), 2.0);
        assert_abs_diff_eq!(mean_at_t(&pr, 2.0, 200.0), 9.0 / 28.0, epsilon = 1e-15);
        // 0.4 / (2 + 0.28 / 0.09)
        assert_abs_diff_eq!(pr.tv_rate_bound(), 0.4 / (2.0 + 0.28 / 0.09), epsilon = 1e-15);
        assert!((pr.tv_rate_bound() - 0.0783).abs() < 5e-5);
    }

    #[test]
    fn near_zero_penalty_is_pure_decay() {
        let pr = BanditParams::new(0.7, 1e-12).unwrap();
        let path = simulate_path(&pr, 2.0, 5.0, &mut derive_stream(1, 0)).unwrap();
        assert_eq!(path.times.len(), 2);
        assert_abs_diff_eq!(path.state_at(3.0, &pr), 2.0 * (-2.1f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn simulated_mean_matches_closed_form() {
        let pr = params();
        let n = 20_000;
        let ys = run_replicas(2, n, |_, rng| {
            let path = simulate_path(&pr, 2.0, 5.0, rng).unwrap();
            [1.0, 2.0, 5.0].map(|t| path.state_at(t, &pr))
        });
        for (j, t) in [1.0, 2.0, 5.0].into_iter().enumerate() {
            let m = ys.iter().map(|v| v[j]).sum::<f64>() / n as f64;
            let var = ys.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let exact = mean_at_t(&pr, 2.0, t);
            assert!((m - exact).abs() < 3.0 * se, "t={t}: {m} vs {exact} (se {se})");
        }
    }

    #[test]
    fn equal_pair_stays_equal() {
        let pr = params();
        let mut pair = CoupledBanditPair::new(1.3, 1.3);
        let mut rng = derive_stream(3, 0);
        for _ in 0..200 {
            couple_wasserstein_step(&mut pair, &pr, &mut rng);
            assert_eq!(pair.y, pair.y_tilde);
        }
    }

    #[test]
    fn monotone_coupling_never_flips() {
        let pr = params();
        let ens = wasserstein_ensemble(&pr, |_| 0.0, |_| 2.0, &[0.5, 1.0, 2.0, 4.0, 8.0], 5000, 4).unwrap();
        assert_eq!(ens.sign_flips, 0);
        for w in ens.moments.windows(2) {
            assert!(w[1].mean_abs_diff <= w[0].mean_abs_diff + 2.0 * (w[0].se_abs_diff + w[1].se_abs_diff));
        }
    }

    #[test]
    fn moment_system_first_order_closed_form() {
        let pr = params();
        let (times, rows) = moment_system(&pr, &[2.0, 4.0, 8.0], 5.0, 0.01).unwrap();
        for (t, row) in times.iter().zip(&rows) {
            assert_abs_diff_eq!(row[0], 2.0 * (-(0.4) * t).exp(), epsilon = 1e-10);
        }
        let (_, zero) = moment_system(&pr, &[0.0; 4], 3.0, 0.1).unwrap();
        assert!(zero.iter().flatten().all(|&h| h == 0.0));
    }

    #[test]
    fn moment_system_second_order_by_hand() {
        // h_2' = -2(p-q) h_2 + q h_1, h_1 = h_1(0) e^{-(p-q)t}.
        let pr = params();
        let (a, q) = (0.4, 0.3);
        let (times, rows) = moment_system(&pr, &[1.0, 3.0], 4.0, 0.005).unwrap();
        for (t, row) in times.iter().zip(&rows) {
            let exact = (3.0 - q / a) * (-2.0 * a * t).exp() + q / a * (-a * t).exp();
            assert_abs_diff_eq!(row[1], exact, epsilon = 1e-10);
        }
    }

    #[test]
    fn u_m_examples() {
        let pr = BanditParams::new(0.6, 0.3).unwrap();
        let u = solve_u_m(&pr).unwrap();
        assert!((u - 1.2564).abs() < 1e-4, "u_M = {u}");
        let pr = params();
        let u = solve_u_m(&pr).unwrap();
        assert!((u.exp_m1() / u - 0.7 / 0.3).abs() < 1e-12);
        let near = BanditParams::new(0.300001, 0.3).unwrap();
        assert!(solve_u_m(&near).unwrap() < 1e-4);
    }

    #[test]
    fn laplace_transform_basics() {
        let pr = params();
        assert_eq!(laplace_invariant(&pr, &[0.0]).unwrap()[0], 0.0);
        let h = 1e-5;
        let v = laplace_invariant(&pr, &[h, -h]).unwrap();
        assert_abs_diff_eq!((v[0] - v[1]) / (2.0 * h), pr.stationary_mean(), epsilon = 1e-8);
        let u_m = solve_u_m(&pr).unwrap();
        assert!(matches!(laplace_invariant(&pr, &[u_m]), Err(Error::Singularity(_))));
    }

    #[test]
    fn coalescent_density_normalized() {
        let pr = params();
        for (y, eps) in [(0.0, 0.0), (0.5, 0.3), (2.0, 0.9), (1.0, 3.0)] {
            let mass = coalescent_density_mass(&pr, y, eps).unwrap();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn coalescent_density_matches_survival_derivative() {
        let pr = params();
        let (y, eps) = (0.7, 0.4);
        for s in [0.6, 1.0, 3.0, 10.0] {
            let h = 1e-6;
            let fd = -(coalescent_survival(&pr, y, eps, s + h) - coalescent_survival(&pr, y, eps, s - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, coalescent_density(&pr, y, eps, s), epsilon = 1e-8);
        }
    }

    #[test]
    fn overlap_equals_tv1_bound() {
        // ∫min(f,g) = 1 - ½(Φ_f + Φ_g + ∫|f-g|) on [0, t].
        let pr = params();
        let (y, eps, t) = (0.4, 0.3, 12.0);
        let overlap = overlap_probability(&pr, y, eps, t).unwrap();
        let bound = tv1_lower_bound(&pr, y, eps, t).unwrap();
        assert_abs_diff_eq!(overlap, bound, epsilon = 1e-8);
    }

    #[test]
    fn maximal_coupling_hits_overlap() {
        let pr = params();
        let (y, eps, t) = (0.4, 0.3, 12.0);
        let n = 40_000;
        let hits = run_replicas(5, n, |_, rng| {
            let (a, b) = maximal_coupling_first_jumps(&pr, y, eps, rng);
            a == b && a < t
        });
        let frac = hits.iter().filter(|&&h| h).count() as f64 / n as f64;
        let bound = tv1_lower_bound(&pr, y, eps, t).unwrap();
        let se = (bound * (1.0 - bound) / n as f64).sqrt();
        assert!((frac - bound).abs() < 4.0 * se, "{frac} vs {bound}");
    }

    #[test]
    fn maximal_coupling_preserves_marginals() {
        let pr = params();
        let (y, eps) = (0.4, 0.6);
        let n = 40_000;
        let draws = run_replicas(6, n, |_, rng| maximal_coupling_first_jumps(&pr, y, eps, rng));
        for s in [1.0, 3.0, 6.0] {
            let emp_t = draws.iter().filter(|d| d.0 > s).count() as f64 / n as f64;
            let emp_s = draws.iter().filter(|d| d.1 > s).count() as f64 / n as f64;
            let exact_t = coalescent_survival(&pr, y, 0.0, s);
            let exact_s = coalescent_survival(&pr, y, eps, s);
            let tol = 4.0 * (0.25 / n as f64).sqrt();
            assert!((emp_t - exact_t).abs() < tol, "T at {s}: {emp_t} vs {exact_t}");
            assert!((emp_s - exact_s).abs() < tol, "S at {s}: {emp_s} vs {exact_s}");
        }
    }

    #[test]
    fn zero_gap_coalesces_at_first_jump() {
        let pr = params();
        let mut rng = derive_stream(8, 0);
        for _ in 0..100 {
            let mut pair = CoupledBanditPair { y: 0.8, y_tilde: 0.8, t: 0.0, coalesced: false, tau: f64::INFINITY };
            couple_coalescent(&mut pair, &pr, &mut rng);
            assert!(pair.coalesced);
            assert_eq!(pair.y, pair.y_tilde);
            assert!(pair.tau > 0.0);
        }
    }

    #[test]
    fn coalescence_is_absorbing() {
        let pr = params();
        let mut rng = derive_stream(9, 0);
        let mut pair = CoupledBanditPair::new(0.1, 0.5);
        while !pair.coalesced {
            couple_coalescent(&mut pair, &pr, &mut rng);
        }
        for _ in 0..100 {
            couple_wasserstein_step(&mut pair, &pr, &mut rng);
            assert_eq!(pair.y, pair.y_tilde);
        }
    }

    #[test]
    fn immediate_coalescent_phase_coalesces_quickly() {
        let pr = params();
        let sampler = |rng: &mut Stream| rng.random::<f64>();
        let curve = tv_experiment(&pr, sampler, sampler, 40.0, 1e-3, 4000, 41, 10).unwrap();
        let mean_jump = 1.0 / pr.jump_rate(pr.stationary_mean());
        let idx = curve.times.iter().position(|&t| t >= 4.0 * mean_jump).unwrap();
        assert!(curve.survival[idx] < 0.5, "{:?}", curve.survival);
        assert!(curve.survival.windows(2).all(|w| w[1] <= w[0]));
    }

    proptest! {
        #[test]
        fn jump_time_residual(y in 0.0f64..50.0, e in 0.0f64..40.0, p in 0.05f64..0.95, frac in 0.01f64..0.99) {
            let pr = BanditParams::new(p, p * frac).unwrap();
            let t = next_jump_time(y, &pr, e);
            prop_assert!(t >= 0.0);
            prop_assert!((pr.cumulative_intensity(y, t) - e).abs() < 1e-12 * e.max(1.0));
        }

        #[test]
        fn jump_rate_bounded_below(y in 0.0f64..1e3, p in 0.05f64..0.95, frac in 0.01f64..0.99) {
            let pr = BanditParams::new(p, p * frac).unwrap();
            prop_assert!(pr.jump_rate(y) >= pr.q * (1.0 - pr.p) / pr.p);
        }

        #[test]
        fn monotone_coupling_keeps_order(y in 0.0f64..5.0, gap in 0.0f64..5.0, seed in any::<u64>()) {
            let pr = params();
            let mut rng = derive_stream(seed, 0);
            let mut pair = CoupledBanditPair::new(y + gap, y);
            for _ in 0..50 {
                couple_wasserstein_step(&mut pair, &pr, &mut rng);
                prop_assert!(pair.y >= pair.y_tilde);
            }
        }
    }
}
