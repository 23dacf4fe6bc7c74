//! Mean-field noisy rotators on the circle.
//!
//! Particles follow `dφ_j = -(K/N) Σ_i sin(φ_j - φ_i) dt + dB_j`; the
//! interaction is evaluated through the order parameter so a step costs
//! `O(N)`. The large-population limit is solved in Fourier space, where the
//! convolution with `J(θ) = -K sin θ` only sees the first mode.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{domain, usage, Error, Result};
use crate::metrics::circular_wasserstein1;
use crate::rng::{run_replicas, Stream};

/// `N` phases on the circle with coupling `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatorEnsemble {
    phases: Vec<f64>,
    coupling: f64,
    scratch: Vec<(f64, f64)>,
}

impl RotatorEnsemble {
    pub fn new(phases: Vec<f64>, coupling: f64) -> Result<Self> {
        if phases.is_empty() {
            return Err(usage("ensemble needs at least one rotator"));
        }
        if !(coupling >= 0.0) {
            return Err(domain(format!("coupling must be nonnegative, got {coupling}")));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(domain("phases must be finite"));
        }
        let phases = phases.into_iter().map(|p| p.rem_euclid(TAU)).collect();
        Ok(Self { phases, coupling, scratch: Vec::new() })
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// One Euler-Maruyama step; returns the order parameter before the step.
    pub fn step(&mut self, dt: f64, rng: &mut Stream) -> (f64, f64) {
        self.scratch.clear();
        self.scratch.extend(self.phases.iter().map(|p| p.sin_cos()));
        let n = self.phases.len() as f64;
        let (s, c) = self.scratch.iter().fold((0.0, 0.0), |(s, c), &(si, ci)| (s + si, c + ci));
        let (s, c) = (s / n, c / n);
        let k = self.coupling;
        let sq = dt.sqrt();
        for (p, &(si, ci)) in self.phases.iter_mut().zip(&self.scratch) {
            let z: f64 = StandardNormal.sample(rng);
            *p = (*p - k * (c * si - s * ci) * dt + sq * z).rem_euclid(TAU);
        }
        (c, s)
    }
}

/// `(R, ψ)` with `R e^{iψ} = (1/N) Σ e^{iφ_j}` and `ψ` in `[0, 2π)`.
pub fn order_parameter(phases: &[f64]) -> (f64, f64) {
    let n = phases.len() as f64;
    let (s, c) = phases.iter().fold((0.0, 0.0), |(s, c), p| {
        let (si, ci) = p.sin_cos();
        (s + si, c + ci)
    });
    let (s, c) = (s / n, c / n);
    (c.hypot(s), s.atan2(c).rem_euclid(TAU))
}

/// Euler-Maruyama run over `[0, T]`; returns the phases every `observe_every` steps
/// (the first snapshot is the initial state).
pub fn simulate_particles(
    mut ensemble: RotatorEnsemble,
    horizon: f64,
    dt: f64,
    observe_every: usize,
    rng: &mut Stream,
) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(domain(format!("time step must lie in (0, 0.1], got {dt}")));
    }
    if ensemble.len() < 2 {
        return Err(usage("need at least two rotators"));
    }
    let steps = (horizon / dt).round() as usize;
    let every = observe_every.max(1);
    let mut out = vec![ensemble.phases.clone()];
    for k in 1..=steps {
        ensemble.step(dt, rng);
        if k % every == 0 || k == steps {
            out.push(ensemble.phases.clone());
        }
    }
    Ok(out)
}

/// Ratios `I_k(x) / I_0(x)` for `k = 0..=m` by the periodic trapezoid rule,
/// scaled by `e^{-x}` to avoid overflow.
pub fn bessel_ratios(x: f64, m: usize) -> Vec<f64> {
    let n = (64 + 4 * m + (8.0 * x.sqrt() + 2.0 * x) as usize).min(1 << 16);
    let mut num = vec![0.0; m + 1];
    for j in 0..n {
        let theta = TAU * j as f64 / n as f64;
        // Σ_j cos(kθ_j) vanishes for k >= 1, so accumulate w - 1 there.
        let wm1 = (x * (theta.cos() - 1.0)).exp_m1();
        num[0] += 1.0 + wm1;
        for (k, v) in num.iter_mut().enumerate().skip(1) {
            *v += wm1 * (k as f64 * theta).cos();
        }
    }
    let norm = num[0];
    num.iter().map(|v| v / norm).collect()
}

/// The self-consistency map `Ψ(x) = ∫cos θ e^{x cos θ} / ∫e^{x cos θ}`.
pub fn psi_function(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain(format!("Ψ is defined for x >= 0, got {x}")));
    }
    Ok(bessel_ratios(x, 1)[1])
}

/// Synchronization level `r_K`: zero for `K <= 1`, else the positive root
/// of `r = Ψ(2Kr)`.
pub fn solve_fixed_point(coupling: f64) -> Result<f64> {
    if !(coupling >= 0.0) {
        return Err(domain(format!("coupling must be nonnegative, got {coupling}")));
    }
    if coupling <= 1.0 {
        return Ok(0.0);
    }
    let psi = |r: f64| bessel_ratios(2.0 * coupling * r, 1)[1];
    let tol = 1e-12;
    let mut r = 1.0;
    for _ in 0..500 {
        let next = 0.5 * r + 0.5 * psi(r);
        if (next - r).abs() < 1e-14 {
            r = next;
            break;
        }
        r = next;
    }
    if (r - psi(r)).abs() > tol || r <= 0.0 {
        // Ψ(2Kr)/r decreases from K > 1 at r = 0 towards 0 at r = ∞.
        let h = |r: f64| psi(r) / r - 1.0;
        let (mut lo, mut hi) = (1e-12, 1.0);
        while h(lo) <= 0.0 {
            lo *= 0.5;
            if lo < 1e-300 {
                return Err(Error::Solver("no positive bracket for the fixed point".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 * hi {
                break;
            }
        }
        r = 0.5 * (lo + hi);
    }
    // Newton polish on g(r) = Ψ(2Kr) - r.
    for _ in 0..3 {
        let h = 1e-7 * r.max(1e-6);
        let g = psi(r) - r;
        let dg = (psi(r + h) - psi(r - h)) / (2.0 * h) - 1.0;
        if dg.abs() > 1e-14 {
            let next = r - g / dg;
            if next > 0.0 && (psi(next) - next).abs() < g.abs() {
                r = next;
            }
        }
    }
    let residual = (r - psi(r)).abs();
    if residual > 1e-10 {
        return Err(Error::Solver(format!("fixed point residual {residual}")));
    }
    Ok(r)
}

/// `q_{ψ,r}(θ) = e^{2Kr cos(θ-ψ)} / ∫e^{2Kr cos}` on the given nodes.
pub fn stationary_profile(coupling: f64, r: f64, psi: f64, grid: &[f64]) -> Vec<f64> {
    let kappa = 2.0 * coupling * r;
    let n = (256 + (8.0 * kappa) as usize).min(1 << 16);
    let norm = TAU / n as f64 * (0..n).map(|j| (kappa * ((TAU * j as f64 / n as f64).cos() - 1.0)).exp()).sum::<f64>();
    grid.iter().map(|&t| (kappa * ((t - psi).cos() - 1.0)).exp() / norm).collect()
}

/// A density on the circle `1/(2π) + Σ_{k=1}^M a_k cos kθ + b_k sin kθ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourierDensity {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FourierDensity {
    pub fn uniform(modes: usize) -> Self {
        Self { a: vec![0.0; modes], b: vec![0.0; modes] }
    }

    /// Fourier coefficients of `q_{ψ,r}`.
    pub fn stationary(coupling: f64, r: f64, psi: f64, modes: usize) -> Self {
        let ratios = bessel_ratios(2.0 * coupling * r, modes);
        let a = (1..=modes).map(|k| ratios[k] / PI * (k as f64 * psi).cos()).collect();
        let b = (1..=modes).map(|k| ratios[k] / PI * (k as f64 * psi).sin()).collect();
        Self { a, b }
    }

    pub fn modes(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let mut v = 1.0 / TAU;
        for k in 1..=self.modes() {
            let (s, c) = (k as f64 * theta).sin_cos();
            v += self.a[k - 1] * c + self.b[k - 1] * s;
        }
        v
    }

    /// CDF from 0: `θ/(2π) + Σ [a_k sin kθ + b_k (1 - cos kθ)] / k`.
    pub fn cdf(&self, theta: f64) -> f64 {
        let mut v = theta / TAU;
        for k in 1..=self.modes() {
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
            v += (self.a[k - 1] * s + self.b[k - 1] * (1.0 - c)) / kf;
        }
        v
    }

    /// Total mass, `1` by construction.
    pub fn mass(&self) -> f64 {
        1.0
    }

    /// `∫ p²`.
    pub fn l2_norm_sq(&self) -> f64 {
        1.0 / TAU + PI * self.a.iter().chain(&self.b).map(|v| v * v).sum::<f64>()
    }

    /// `L²` distance to another density.
    pub fn l2_distance(&self, other: &Self) -> f64 {
        let m = self.modes().max(other.modes());
        let get = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
        let s: f64 = (0..m)
            .map(|k| (get(&self.a, k) - get(&other.a, k)).powi(2) + (get(&self.b, k) - get(&other.b, k)).powi(2))
            .sum();
        (PI * s).sqrt()
    }

    /// Rotation `θ -> p(θ - c)`.
    pub fn rotated(&self, c: f64) -> Self {
        let mut out = self.clone();
        for k in 1..=self.modes() {
            let (s, co) = (k as f64 * c).sin_cos();
            let (a, b) = (self.a[k - 1], self.b[k - 1]);
            out.a[k - 1] = a * co - b * s;
            out.b[k - 1] = a * s + b * co;
        }
        out
    }

    /// Smallest value on `n` equally spaced nodes.
    pub fn min_on_grid(&self, n: usize) -> f64 {
        (0..n).map(|j| self.eval(TAU * j as f64 / n as f64)).fold(f64::INFINITY, f64::min)
    }

    /// Angle of the first mode, the center of the closest synchronized profile.
    pub fn center(&self) -> f64 {
        self.b[0].atan2(self.a[0]).rem_euclid(TAU)
    }

    fn to_complex(&self) -> Vec<(f64, f64)> {
        // c_k = (a_k - i b_k) / 2, c_0 = 1/(2π)
        std::iter::once((1.0 / TAU, 0.0)).chain(self.a.iter().zip(&self.b).map(|(a, b)| (0.5 * a, -0.5 * b))).collect()
    }

    fn from_complex(c: &[(f64, f64)]) -> Self {
        Self {
            a: c[1..].iter().map(|z| 2.0 * z.0).collect(),
            b: c[1..].iter().map(|z| -2.0 * z.1).collect(),
        }
    }
}

/// One eigenvalue of the linearization at the uniform state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub mode: usize,
    pub value: f64,
    pub multiplicity: usize,
}

/// Spectrum at the uniform density: `-(1-K)/2` on the first mode and
/// `-k²/2` on mode `k`, each with multiplicity two (cosine and sine).
pub fn linearized_spectrum_uniform(coupling: f64, modes: usize) -> Result<Vec<Eigenvalue>> {
    if modes < 2 {
        return Err(usage("need at least two modes"));
    }
    Ok((1..=modes)
        .map(|k| Eigenvalue {
            mode: k,
            value: if k == 1 { -(1.0 - coupling) / 2.0 } else { -((k * k) as f64) / 2.0 },
            multiplicity: 2,
        })
        .collect())
}

/// Nonlinear term `k π K (c_1 c_{k-1} - conj(c_1) c_{k+1})` for `k = 1..=M`.
fn nonlinear_term(c: &[(f64, f64)], coupling: f64, out: &mut [(f64, f64)]) {
    let m = c.len() - 1;
    let c1 = c[1];
    let mul = |x: (f64, f64), y: (f64, f64)| (x.0 * y.0 - x.1 * y.1, x.0 * y.1 + x.1 * y.0);
    let c1_conj = (c1.0, -c1.1);
    for k in 1..=m {
        let left = mul(c1, c[k - 1]);
        let right = if k < m { mul(c1_conj, c[k + 1]) } else { (0.0, 0.0) };
        let f = k as f64 * PI * coupling;
        out[k] = (f * (left.0 - right.0), f * (left.1 - right.1));
    }
}

/// Right-hand side of the Fourier system in real coordinates, for Jacobian checks.
pub fn pde_rhs(p: &FourierDensity, coupling: f64) -> FourierDensity {
    let c = p.to_complex();
    let mut n = vec![(0.0, 0.0); c.len()];
    nonlinear_term(&c, coupling, &mut n);
    let rhs: Vec<(f64, f64)> = (0..c.len())
        .map(|k| {
            let lap = -0.5 * (k * k) as f64;
            (lap * c[k].0 + n[k].0, lap * c[k].1 + n[k].1)
        })
        .collect();
    FourierDensity::from_complex(&rhs)
}

/// Snapshots of the Fourier solution.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<FourierDensity>,
}

/// Integrates the nonlinear Fokker-Planck equation with Crank-Nicolson on the
/// Laplacian and second-order Adams-Bashforth on the transport term (first
/// step by IMEX Euler). Snapshots are kept every `save_every` steps.
pub fn solve_pde(p0: &FourierDensity, coupling: f64, horizon: f64, dt: f64, save_every: usize) -> Result<PdeTrajectory> {
    if p0.modes() < 8 || p0.b.len() != p0.a.len() {
        return Err(usage("need at least 8 modes with matching cosine and sine parts"));
    }
    if !(dt > 0.0 && horizon >= 0.0) {
        return Err(domain("need dt > 0 and a nonnegative horizon"));
    }
    let steps = (horizon / dt).round() as usize;
    let m = p0.modes();
    let mut c = p0.to_complex();
    let mut n_now = vec![(0.0, 0.0); m + 1];
    let mut n_prev = vec![(0.0, 0.0); m + 1];
    let every = save_every.max(1);
    let mut traj = PdeTrajectory { times: vec![0.0], states: vec![p0.clone()] };
    for step in 1..=steps {
        nonlinear_term(&c, coupling, &mut n_now);
        for k in 1..=m {
            let half_lap = 0.25 * dt * (k * k) as f64;
            let (ex, im) = if step == 1 {
                (n_now[k], (1.0 + 2.0 * half_lap, 1.0))
            } else {
                ((1.5 * n_now[k].0 - 0.5 * n_prev[k].0, 1.5 * n_now[k].1 - 0.5 * n_prev[k].1), (1.0 + half_lap, 1.0 - half_lap))
            };
            let (den, keep) = im;
            c[k].0 = (keep * c[k].0 + dt * ex.0) / den;
            c[k].1 = (keep * c[k].1 + dt * ex.1) / den;
        }
        std::mem::swap(&mut n_now, &mut n_prev);
        if c.iter().any(|z| !(z.0.abs() < 1e6 && z.1.abs() < 1e6)) {
            return Err(Error::StepSize(format!("Fourier coefficients blew up at step {step} (dt = {dt})")));
        }
        if step % every == 0 || step == steps {
            traj.times.push(step as f64 * dt);
            traj.states.push(FourierDensity::from_complex(&c));
        }
    }
    Ok(traj)
}

/// `L²` distance from `p` to the synchronized profile centered at the first-mode angle.
pub fn distance_to_manifold(p: &FourierDensity, coupling: f64) -> Result<f64> {
    let r = solve_fixed_point(coupling)?;
    let q = FourierDensity::stationary(coupling, r, p.center(), p.modes());
    Ok(p.l2_distance(&q))
}

/// Von Mises draw with concentration `kappa` around `mu` (Best-Fisher rejection).
pub fn sample_von_mises(mu: f64, kappa: f64, rng: &mut Stream) -> f64 {
    if kappa < 1e-8 {
        return rng.random::<f64>() * TAU;
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let angle = f.clamp(-1.0, 1.0).acos();
            let signed = if u3 > 0.5 { angle } else { -angle };
            return (mu + signed).rem_euclid(TAU);
        }
    }
}

/// Circular `W_1` between the empirical law of `phases` and a Fourier density,
/// evaluated on `cells` equal cells.
pub fn circular_w1_to_density(phases: &[f64], p: &FourierDensity, cells: usize) -> f64 {
    let mut sorted: Vec<f64> = phases.iter().map(|x| x.rem_euclid(TAU)).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let h = TAU / cells as f64;
    let diff: Vec<f64> = (0..cells)
        .map(|j| {
            let t = (j as f64 + 0.5) * h;
            sorted.partition_point(|&x| x <= t) as f64 / n - p.cdf(t)
        })
        .collect();
    circular_wasserstein1(&diff, h)
}

/// Variance of the synchronization center against rescaled time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDiffusion {
    pub n_rotators: usize,
    pub taus: Vec<f64>,
    pub var_psi: Vec<f64>,
    pub se_var: Vec<f64>,
    /// Slope of the fit through the origin: the squared diffusion constant.
    pub slope: f64,
    pub r_squared: f64,
    pub n_used: usize,
    pub n_excluded: usize,
    /// Share of observations whose empirical law is within circular `W_1`
    /// 0.1 of the synchronized profile centered at the order-parameter angle.
    pub near_manifold_fraction: f64,
}

/// Runs replicas started from `q_{ψ0, r_K}` up to physical time `τ_f N` and
/// records the unwrapped order-parameter angle on `n_obs + 1` equally spaced
/// values of `τ`. Replicas whose `R` drops below 0.2 are excluded.
#[allow(clippy::too_many_arguments)]
pub fn phase_diffusion_experiment(
    n_rotators: usize,
    coupling: f64,
    tau_final: f64,
    n_obs: usize,
    n_replicas: usize,
    dt: f64,
    seed: u64,
) -> Result<PhaseDiffusion> {
    if !(coupling > 1.0) {
        return Err(domain(format!("phase diffusion needs K > 1, got {coupling}")));
    }
    if n_rotators < 2 || n_obs < 2 || n_replicas < 3 || !(tau_final > 0.0) || !(dt > 0.0 && dt <= 0.1) {
        return Err(usage("invalid phase-diffusion configuration"));
    }
    let r_k = solve_fixed_point(coupling)?;
    let kappa = 2.0 * coupling * r_k;
    let profile0 = FourierDensity::stationary(coupling, r_k, 0.0, 64);
    let total_steps = (tau_final * n_rotators as f64 / dt).round() as usize;
    let obs_steps: Vec<usize> = (0..=n_obs).map(|j| (j * total_steps) / n_obs).collect();
    let runs = run_replicas(seed, n_replicas, |_, rng| {
        let psi0 = rng.random::<f64>() * TAU;
        let phases: Vec<f64> = (0..n_rotators).map(|_| sample_von_mises(psi0, kappa, rng)).collect();
        let mut ens = RotatorEnsemble::new(phases, coupling).expect("valid ensemble");
        let (_, start) = order_parameter(ens.phases());
        let (mut unwrapped, mut last) = (0.0, start);
        let mut track = Vec::with_capacity(n_obs + 1);
        let mut desync = false;
        let mut near = 0usize;
        let mut obs = 0usize;
        for step in 0..=total_steps {
            let observe = obs <= n_obs && step == obs_steps[obs];
            if observe {
                let (_, psi) = order_parameter(ens.phases());
                if circular_w1_to_density(ens.phases(), &profile0.rotated(psi), 256) < 0.1 {
                    near += 1;
                }
            }
            // Order parameter of the state at `step`.
            let (c, s) = if step < total_steps { ens.step(dt, rng) } else { order_parameter_cs(ens.phases()) };
            let psi = s.atan2(c);
            let mut d = psi - last;
            d -= TAU * (d / TAU).round();
            unwrapped += d;
            last = psi;
            if observe {
                track.push(unwrapped);
                desync |= c.hypot(s) < 0.2;
                obs += 1;
            }
        }
        (track, desync, near)
    });
    let used: Vec<&Vec<f64>> = runs.iter().filter(|r| !r.1).map(|r| &r.0).collect();
    let n_used = used.len();
    if n_used < 3 {
        return Err(Error::Solver(format!("only {n_used} synchronized replicas")));
    }
    let taus: Vec<f64> = obs_steps.iter().map(|&s| s as f64 * dt / n_rotators as f64).collect();
    let nu = n_used as f64;
    let mut var_psi = Vec::new();
    let mut se_var = Vec::new();
    for j in 0..taus.len() {
        let xs: Vec<f64> = used.iter().map(|t| t[j] - t[0]).collect();
        let m = xs.iter().sum::<f64>() / nu;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nu - 1.0);
        let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / nu;
        var_psi.push(v);
        se_var.push(((m4 - v * v * (nu - 3.0) / (nu - 1.0)) / nu).max(0.0).sqrt());
    }
    let sxy: f64 = taus.iter().zip(&var_psi).map(|(t, v)| t * v).sum();
    let sxx: f64 = taus.iter().map(|t| t * t).sum();
    let slope = sxy / sxx;
    let mean_v = var_psi.iter().sum::<f64>() / var_psi.len() as f64;
    let ss_res: f64 = taus.iter().zip(&var_psi).map(|(t, v)| (v - slope * t).powi(2)).sum();
    let ss_tot: f64 = var_psi.iter().map(|v| (v - mean_v).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let near = runs.iter().map(|r| r.2).sum::<usize>();
    Ok(PhaseDiffusion {
        n_rotators,
        taus,
        var_psi,
        se_var,
        slope,
        r_squared,
        n_used,
        n_excluded: n_replicas - n_used,
        near_manifold_fraction: near as f64 / (n_replicas * (n_obs + 1)) as f64,
    })
}

fn order_parameter_cs(phases: &[f64]) -> (f64, f64) {
    let n = phases.len() as f64;
    let (s, c) = phases.iter().fold((0.0, 0.0), |(s, c), p| {
        let (si, ci) = p.sin_cos();
        (s + si, c + ci)
    });
    (c / n, s / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// `I_ν(x)` by its power series.
    fn bessel_series(nu: u32, x: f64) -> f64 {
        let mut term = (0.5 * x).powi(nu as i32) / (1..=nu).map(f64::from).product::<f64>();
        let mut sum = term;
        for m in 1..200 {
            term *= (0.25 * x * x) / (m as f64 * (m as f64 + nu as f64));
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    #[test]
    fn order_parameter_examples() {
        let (r, psi) = order_parameter(&[1.3; 10]);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(psi, 1.3, epsilon = 1e-15);
        let spaced: Vec<f64> = (0..17).map(|j| TAU * j as f64 / 17.0).collect();
        assert!(order_parameter(&spaced).0 < 1e-10);
    }

    #[test]
    fn mean_field_drift_matches_pair_sum() {
        let mut rng = derive_stream(1, 0);
        let phases: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * TAU).collect();
        let (r, psi) = order_parameter(&phases);
        let n = phases.len() as f64;
        for &pj in phases.iter().take(20) {
            let direct = phases.iter().map(|pi| (pj - pi).sin()).sum::<f64>() / n;
            assert_abs_diff_eq!(direct, r * (pj - psi).sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn psi_properties() {
        assert_eq!(psi_function(0.0).unwrap(), 0.0);
        let h = 1e-4;
        let slope = (psi_function(h).unwrap() - psi_function(0.0).unwrap()) / h;
        assert_abs_diff_eq!(slope, 0.5, epsilon = 1e-6);
        let v = psi_function(4.0).unwrap();
        assert_abs_diff_eq!(v, bessel_series(1, 4.0) / bessel_series(0, 4.0), epsilon = 1e-10);
        assert!(0.0 < v && v < 1.0);
        assert!(psi_function(-1.0).is_err());
        let grid: Vec<f64> = (1..=200).map(|i| i as f64 * 0.1).collect();
        let vals: Vec<f64> = grid.iter().map(|&x| psi_function(x).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        assert!(vals.iter().all(|&v| v < 1.0));
        // Concavity on the grid.
        assert!(vals.windows(3).all(|w| w[0] + w[2] <= 2.0 * w[1] + 1e-14));
    }

    #[test]
    fn bessel_ratios_match_series() {
        for x in [0.5, 3.4, 10.0] {
            let ratios = bessel_ratios(x, 6);
            for (k, r) in ratios.iter().enumerate() {
                assert_abs_diff_eq!(*r, bessel_series(k as u32, x) / bessel_series(0, x), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fixed_point_examples() {
        assert_eq!(solve_fixed_point(0.8).unwrap(), 0.0);
        assert_eq!(solve_fixed_point(1.0).unwrap(), 0.0);
        let r = solve_fixed_point(2.0).unwrap();
        assert!(r > 0.8 && r < 0.95, "r_K = {r}");
        assert!((r - psi_function(4.0 * r).unwrap()).abs() < 1e-10);
        let k = 1.0 + 1e-6;
        let r = solve_fixed_point(k).unwrap();
        assert!(r > 0.0 && r < 1e-2, "r_K = {r}");
        assert!((r - psi_function(2.0 * k * r).unwrap()).abs() < 1e-10);
        // Leading-order branch r ≈ sqrt(2(K-1)/K³).
        assert_abs_diff_eq!(r / (2.0 * (k - 1.0) / k.powi(3)).sqrt(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn fixed_point_increases_past_bifurcation() {
        let rs: Vec<f64> = (0..=29).map(|i| solve_fixed_point(1.1 + 0.1 * i as f64).unwrap()).collect();
        assert!(rs[0] > 0.0);
        assert!(rs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn profile_examples() {
        let grid: Vec<f64> = (0..2048).map(|j| TAU * j as f64 / 2048.0).collect();
        assert!(stationary_profile(2.0, 0.0, 1.0, &grid).iter().all(|&v| (v - 1.0 / TAU).abs() < 1e-15));
        let r = solve_fixed_point(2.0).unwrap();
        let q = stationary_profile(2.0, r, 0.7, &grid);
        assert_abs_diff_eq!(q.iter().sum::<f64>() * TAU / 2048.0, 1.0, epsilon = 1e-12);
        let q0 = stationary_profile(2.0, r, 0.0, &grid.iter().map(|t| t - 0.7).collect::<Vec<_>>());
        for (a, b) in q.iter().zip(&q0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        let fourier = FourierDensity::stationary(2.0, r, 0.7, 64);
        for (t, v) in grid.iter().zip(&q).step_by(37) {
            assert_abs_diff_eq!(fourier.eval(*t), *v, epsilon = 1e-12);
        }
        assert!(fourier.min_on_grid(1024) > 0.0);
        assert_abs_diff_eq!(fourier.center(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn spectrum_values() {
        let s = linearized_spectrum_uniform(0.5, 6).unwrap();
        assert_abs_diff_eq!(s[0].value, -0.25);
        assert_abs_diff_eq!(linearized_spectrum_uniform(2.0, 6).unwrap()[0].value, 0.5);
        for k in [0.3, 1.0, 3.0] {
            assert_eq!(linearized_spectrum_uniform(k, 6).unwrap()[2].value, -4.5);
        }
        assert!(s.iter().all(|e| e.multiplicity == 2));
        assert!(linearized_spectrum_uniform(1.0, 1).is_err());
    }

    #[test]
    fn spectrum_matches_finite_difference_jacobian() {
        let (k, m) = (0.5, 10);
        let base = FourierDensity::uniform(m);
        let spec = linearized_spectrum_uniform(k, m).unwrap();
        let h = 1e-7;
        for j in 0..2 * m {
            let mut pert = base.clone();
            if j < m {
                pert.a[j] = h;
            } else {
                pert.b[j - m] = h;
            }
            let rhs = pde_rhs(&pert, k);
            let col: Vec<f64> = rhs.a.iter().chain(&rhs.b).map(|v| v / h).collect();
            for (i, v) in col.iter().enumerate() {
                let expected = if i == j { spec[j % m].value } else { 0.0 };
                assert_abs_diff_eq!(*v, expected, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn pde_uniform_is_fixed() {
        let traj = solve_pde(&FourierDensity::uniform(16), 2.0, 5.0, 0.01, 100).unwrap();
        assert!(traj.states.iter().all(|s| s.a.iter().chain(&s.b).all(|&v| v == 0.0)));
    }

    #[test]
    fn pde_keeps_synchronized_profile() {
        let r = solve_fixed_point(2.0).unwrap();
        let q = FourierDensity::stationary(2.0, r, 0.0, 64);
        let traj = solve_pde(&q, 2.0, 10.0, 0.01, 50).unwrap();
        for s in &traj.states {
            assert!(s.l2_distance(&q) < 1e-6);
            assert_eq!(s.mass(), 1.0);
        }
    }

    #[test]
    fn pde_converges_to_manifold() {
        let mut p0 = FourierDensity::uniform(64);
        p0.a[0] = 0.1;
        let traj = solve_pde(&p0, 2.0, 50.0, 0.01, 1000).unwrap();
        let end = traj.states.last().unwrap();
        assert!(distance_to_manifold(end, 2.0).unwrap() < 1e-4);
        assert!(traj.states.iter().all(|s| s.min_on_grid(256) > -1e-10));
    }

    #[test]
    fn pde_rotation_equivariance() {
        let mut p0 = FourierDensity::uniform(32);
        p0.a[0] = 0.08;
        p0.b[1] = 0.03;
        p0.a[3] = -0.01;
        let c = 1.234;
        let a = solve_pde(&p0, 1.7, 3.0, 0.005, 600).unwrap();
        let b = solve_pde(&p0.rotated(c), 1.7, 3.0, 0.005, 600).unwrap();
        let (sa, sb) = (a.states.last().unwrap(), b.states.last().unwrap());
        assert!(sa.rotated(c).l2_distance(sb) < 1e-12);
    }

    #[test]
    fn pde_blow_up_is_reported() {
        let mut p0 = FourierDensity::uniform(16);
        p0.a[0] = 0.15;
        assert!(matches!(solve_pde(&p0, 50.0, 10.0, 0.1, 1), Err(Error::StepSize(_))));
    }

    #[test]
    fn decoupled_rotators_diffuse() {
        let n = 2000;
        let mut ens = RotatorEnsemble::new(vec![0.0; n], 0.0).unwrap();
        let mut rng = derive_stream(3, 0);
        let mut unwrapped = vec![0.0; n];
        let mut last: Vec<f64> = ens.phases().to_vec();
        for _ in 0..200 {
            ens.step(0.01, &mut rng);
            for (j, p) in ens.phases().iter().enumerate() {
                let mut d = p - last[j];
                d -= TAU * (d / TAU).round();
                unwrapped[j] += d;
                last[j] = *p;
            }
        }
        let var = unwrapped.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let se = 2.0 * (2.0 / n as f64).sqrt();
        assert!((var - 2.0).abs() < 3.0 * se, "variance {var}");
    }

    #[test]
    fn strong_coupling_keeps_cluster() {
        let ens = RotatorEnsemble::new(vec![1.0; 500], 10.0).unwrap();
        let snaps = simulate_particles(ens, 1.0, 0.01, 10, &mut derive_stream(4, 0)).unwrap();
        // With K = 10 the stationary R is Ψ(20 R) ≈ 0.97.
        assert!(snaps.iter().all(|s| order_parameter(s).0 > 0.9));
    }

    #[test]
    fn rotation_equivariance_of_particles() {
        let mut rng = derive_stream(5, 0);
        let phases: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * TAU).collect();
        let c = 0.9;
        let a = simulate_particles(RotatorEnsemble::new(phases.clone(), 2.0).unwrap(), 2.0, 0.01, 200, &mut derive_stream(6, 0)).unwrap();
        let shifted: Vec<f64> = phases.iter().map(|p| p + c).collect();
        let b = simulate_particles(RotatorEnsemble::new(shifted, 2.0).unwrap(), 2.0, 0.01, 200, &mut derive_stream(6, 0)).unwrap();
        for (x, y) in a.last().unwrap().iter().zip(b.last().unwrap()) {
            let mut d = y - x - c;
            d -= TAU * (d / TAU).round();
            assert!(d.abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn particles_relax_to_synchronized_profile() {
        let mut rng = derive_stream(7, 0);
        let phases: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() * TAU).collect();
        let ens = RotatorEnsemble::new(phases, 2.0).unwrap();
        let snaps = simulate_particles(ens, 20.0, 0.01, 2000, &mut rng).unwrap();
        let last = snaps.last().unwrap();
        let (_, psi) = order_parameter(last);
        let r = solve_fixed_point(2.0).unwrap();
        let q = FourierDensity::stationary(2.0, r, psi, 64);
        let w1 = circular_w1_to_density(last, &q, 512);
        assert!(w1 < 0.05, "circular W1 {w1}");
    }

    #[test]
    fn von_mises_moments() {
        let kappa = 3.4;
        let n = 50_000;
        let mut rng = derive_stream(8, 0);
        let xs: Vec<f64> = (0..n).map(|_| sample_von_mises(0.5, kappa, &mut rng)).collect();
        let (r, psi) = order_parameter(&xs);
        assert!((r - psi_function(kappa).unwrap()).abs() < 0.01, "R = {r}");
        assert!((psi - 0.5).abs() < 0.02);
    }

    #[test]
    fn circular_w1_zero_for_matching_law() {
        let n = 4096;
        let phases: Vec<f64> = (0..n).map(|j| TAU * (j as f64 + 0.5) / n as f64).collect();
        assert!(circular_w1_to_density(&phases, &FourierDensity::uniform(8), 512) < 1e-3);
        let shifted = FourierDensity::stationary(2.0, 0.8, 1.0, 32);
        let other = FourierDensity::stationary(2.0, 0.8, 1.0 + PI, 32);
        assert!(circular_w1_to_density(&phases, &shifted, 512) > 0.1);
        assert!(circular_w1_to_density(&phases, &other, 512) > 0.1);
    }

    #[test]
    fn phase_diffusion_smoke() {
        let res = phase_diffusion_experiment(100, 2.0, 0.2, 4, 12, 0.02, 9).unwrap();
        assert_eq!(res.taus[0], 0.0);
        assert_eq!(res.var_psi[0], 0.0);
        assert_eq!(res.n_used + res.n_excluded, 12);
        assert!(res.var_psi.iter().skip(1).all(|&v| v > 0.0));
    }

    proptest! {
        #[test]
        fn order_parameter_in_range(phases in prop::collection::vec(-20.0f64..20.0, 1..50)) {
            let (r, psi) = order_parameter(&phases);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
            prop_assert!((0.0..TAU).contains(&psi));
        }

        #[test]
        fn ensemble_phases_wrapped(seed in any::<u64>(), k in 0.0f64..5.0) {
            let mut rng = derive_stream(seed, 0);
            let mut ens = RotatorEnsemble::new(vec![0.1, 6.2, 3.0, -1.0], k).unwrap();
            for _ in 0..20 {
                ens.step(0.05, &mut rng);
                prop_assert!(ens.phases().iter().all(|p| (0.0..TAU).contains(p)));
            }
        }
    }
}
