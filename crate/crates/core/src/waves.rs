//! Traveling waves of `∂_t u + ∂_x B(u) = ½ ∂²_x A(u)` with CDF data, and the
//! rank-based McKean-Vlasov particle system whose law solves the equation.
//!
//! Flux and diffusion are polynomials on `[0, 1]`. Waves run from 0 to 1 and
//! are pinned by `φ(0) = 1/2`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{domain, usage, Error, Result};
use crate::metrics::{l1_cdf_distance, wasserstein_p_samples, wasserstein_p_samples_cdf, EmpiricalMeasure, GridCdf};
use crate::numeric::{adaptive_rk4_autonomous, integrate, integrate_to_infinity};

/// A real polynomial with coefficients in ascending degree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(domain("polynomial coefficients must be finite"));
        }
        let mut coeffs = coeffs;
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Ok(Self { coeffs })
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::constant(0.0);
        }
        Self {
            coeffs: self.coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect(),
        }
    }

    /// The antiderivative vanishing at 0.
    pub fn antiderivative(&self) -> Self {
        let mut coeffs = vec![0.0];
        coeffs.extend(self.coeffs.iter().enumerate().map(|(k, c)| c / (k + 1) as f64));
        Self { coeffs }
    }

    /// Coefficients of `x -> p(1 - x)`.
    pub fn reflect(&self) -> Self {
        // Expand Σ c_k (1 - x)^k with binomial rows.
        let n = self.coeffs.len();
        let mut out = vec![0.0; n];
        let mut row = vec![1.0];
        for (k, c) in self.coeffs.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                out[j] += c * r * if j % 2 == 0 { 1.0 } else { -1.0 };
            }
            if k + 1 < n {
                let mut next = vec![1.0; row.len() + 1];
                for j in 1..row.len() {
                    next[j] = row[j - 1] + row[j];
                }
                row = next;
            }
        }
        Self { coeffs: out }
    }
}

/// Flux `B` and diffusion `σ² = A'` of the advection-diffusion equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxDiffusionSpec {
    flux: Poly,
    sigma2: Poly,
    drift: Poly,
    speed: f64,
    margin: Poly,
    margin_reflected: Poly,
    sigma2_reflected: Poly,
}

impl FluxDiffusionSpec {
    /// Validates `σ² >= 0` on a fine grid of `[0, 1]`.
    pub fn new(flux: Poly, sigma2: Poly) -> Result<Self> {
        if let Some(u) = (0..=1000).map(|i| i as f64 / 1000.0).find(|&u| sigma2.eval(u) < 0.0) {
            return Err(domain(format!("σ² is negative at u = {u}")));
        }
        let speed = flux.eval(1.0) - flux.eval(0.0);
        let mut m = flux.coeffs().to_vec();
        m[0] = 0.0;
        if m.len() < 2 {
            m.push(0.0);
        }
        m[1] -= speed;
        let margin = Poly::new(m)?;
        let mut r = margin.reflect().coeffs;
        r[0] = 0.0;
        Ok(Self {
            drift: flux.derivative(),
            margin_reflected: Poly::new(r)?,
            sigma2_reflected: sigma2.reflect(),
            margin,
            speed,
            flux,
            sigma2,
        })
    }

    /// `B(u) = u(1 - u)` with `σ² = 1`, whose wave is `1/(1 + e^{-2x})`.
    pub fn logistic() -> Self {
        Self::new(Poly { coeffs: vec![0.0, 1.0, -1.0] }, Poly::constant(1.0)).expect("valid spec")
    }

    pub fn flux(&self) -> &Poly {
        &self.flux
    }

    pub fn sigma2(&self) -> &Poly {
        &self.sigma2
    }

    /// `b = B'`.
    pub fn drift(&self) -> &Poly {
        &self.drift
    }

    /// Rankine-Hugoniot speed between 0 and 1.
    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// `q = B(0)`, the wave integration constant for limits 0 and 1.
    pub fn q_flux(&self) -> f64 {
        self.flux.eval(0.0)
    }

    /// `B(u) - B(0) - s u`.
    pub fn margin(&self, u: f64) -> f64 {
        if u > 0.5 {
            self.margin_reflected.eval(1.0 - u)
        } else {
            self.margin.eval(u)
        }
    }

    /// Same spec with `σ²` multiplied by `factor`.
    pub fn with_scaled_diffusion(&self, factor: f64) -> Result<Self> {
        Self::new(self.flux.clone(), Poly::new(self.sigma2.coeffs.iter().map(|c| c * factor).collect())?)
    }
}

/// `s = (B(w⁺) - B(w⁻)) / (w⁺ - w⁻)`.
pub fn rankine_hugoniot(flux: impl Fn(f64) -> f64, w_minus: f64, w_plus: f64) -> Result<f64> {
    if w_minus == w_plus {
        return Err(domain("Rankine-Hugoniot speed needs distinct end states"));
    }
    Ok((flux(w_plus) - flux(w_minus)) / (w_plus - w_minus))
}

/// Outcome of the chord test `B(u) > B(0) + s u` on `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OleinikCheck {
    pub admissible: bool,
    pub min_margin: f64,
    pub argmin: f64,
}

/// Checks the Oleĭnik E-condition at the interior points of a uniform grid of
/// `n_grid` nodes on `[0, 1]`.
pub fn check_oleinik(flux: impl Fn(f64) -> f64, n_grid: usize) -> Result<OleinikCheck> {
    if n_grid < 3 {
        return Err(usage("Oleĭnik check needs at least 3 grid nodes"));
    }
    let (b0, b1) = (flux(0.0), flux(1.0));
    let s = b1 - b0;
    let mut best = OleinikCheck { admissible: true, min_margin: f64::INFINITY, argmin: 0.0 };
    for i in 1..n_grid - 1 {
        let u = i as f64 / (n_grid - 1) as f64;
        let m = flux(u) - b0 - s * u;
        if m < best.min_margin {
            best.min_margin = m;
            best.argmin = u;
        }
    }
    best.admissible = best.min_margin > 0.0;
    Ok(best)
}

/// A wave profile tabulated on a grid.
///
/// `complement` holds `1 - φ` computed directly, which keeps full relative
/// precision in the right tail where `φ` itself rounds to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveProfile {
    grid: Vec<f64>,
    values: Vec<f64>,
    complement: Vec<f64>,
    cdf: GridCdf,
    speed: f64,
    q_flux: f64,
}

impl WaveProfile {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn complement(&self) -> &[f64] {
        &self.complement
    }

    pub fn cdf(&self) -> &GridCdf {
        &self.cdf
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn q_flux(&self) -> f64 {
        self.q_flux
    }

    /// Strict increase node to node, read from `φ` on the left half and from
    /// `1 - φ` on the right half.
    pub fn is_strictly_increasing(&self) -> bool {
        (1..self.grid.len()).all(|i| {
            if self.values[i] <= 0.5 {
                self.values[i] > self.values[i - 1]
            } else {
                self.complement[i] < self.complement[i - 1]
            }
        })
    }

    /// `max |½σ²(φ)φ' - (B(φ) - sφ - q)|` over interior nodes of a uniform
    /// grid, with `φ'` from the eighth-order central difference.
    pub fn ode_residual(&self, spec: &FluxDiffusionSpec) -> Result<f64> {
        const W: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let n = self.grid.len();
        if n < 9 {
            return Err(usage("residual needs at least 9 nodes"));
        }
        let h = (self.grid[n - 1] - self.grid[0]) / (n - 1) as f64;
        if self.grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
            return Err(usage("residual needs a uniform grid"));
        }
        let mut worst = 0.0f64;
        for i in 4..n - 4 {
            let d: f64 = W.iter().enumerate().map(|(j, w)| w * (self.values[i + j + 1] - self.values[i - j - 1])).sum::<f64>() / h;
            let phi = self.values[i];
            let lhs = 0.5 * spec.sigma2.eval(phi) * d;
            let rhs = spec.flux.eval(phi) - spec.speed * phi - self.q_flux;
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(worst)
    }
}

/// Solves `½σ²(φ)φ' = B(φ) - sφ - q` outward from `φ(0) = 1/2` with adaptive
/// RK4, the right half in the variable `1 - φ`.
pub fn solve_wave(spec: &FluxDiffusionSpec, x_grid: &[f64]) -> Result<WaveProfile> {
    if x_grid.len() < 2 || x_grid.iter().any(|x| !x.is_finite()) || x_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("wave grid must be finite, strictly increasing, with at least 2 nodes"));
    }
    let check = check_oleinik(|u| spec.flux.eval(u), 1001)?;
    if !check.admissible {
        return Err(domain(format!(
            "Oleĭnik condition fails: margin {} at u = {}",
            check.min_margin, check.argmin
        )));
    }
    if let Some(u) = (1..1000).map(|i| i as f64 / 1000.0).find(|&u| spec.sigma2.eval(u) <= 0.0) {
        return Err(domain(format!("σ² vanishes inside (0, 1) at u = {u}")));
    }
    let split = x_grid.partition_point(|&x| x < 0.0);
    let tol = 1e-13;
    let left_x: Vec<f64> = x_grid[..split].iter().rev().copied().collect();
    let left = adaptive_rk4_autonomous(
        |phi: f64| 2.0 * spec.margin.eval(phi) / spec.sigma2.eval(phi),
        0.0,
        0.5,
        &left_x,
        tol,
        1e-300,
    )?;
    let right = adaptive_rk4_autonomous(
        |psi: f64| -2.0 * spec.margin_reflected.eval(psi) / spec.sigma2_reflected.eval(psi),
        0.0,
        0.5,
        &x_grid[split..],
        tol,
        1e-300,
    )?;
    let mut values = Vec::with_capacity(x_grid.len());
    let mut complement = Vec::with_capacity(x_grid.len());
    for phi in left.into_iter().rev() {
        values.push(phi);
        complement.push(1.0 - phi);
    }
    for psi in right {
        values.push(1.0 - psi);
        complement.push(psi);
    }
    for (i, (&phi, &psi)) in values.iter().zip(&complement).enumerate() {
        let inside = phi > 0.0 && psi > 0.0;
        let slope = if phi <= 0.5 { spec.margin.eval(phi) } else { spec.margin_reflected.eval(psi) };
        if inside && !(slope > 0.0) {
            return Err(Error::Solver(format!(
                "wave slope is not positive at x = {} (φ = {phi})",
                x_grid[i]
            )));
        }
    }
    let mut running = 0.0f64;
    let monotone: Vec<f64> = values.iter().map(|&v| {
        running = running.max(v.clamp(0.0, 1.0));
        running
    }).collect();
    let cdf = GridCdf::new(x_grid.to_vec(), monotone)?;
    Ok(WaveProfile {
        grid: x_grid.to_vec(),
        values,
        complement,
        cdf,
        speed: spec.speed,
        q_flux: spec.q_flux(),
    })
}

/// Finiteness of the first moment of the wave's law and the value of the
/// defining integral (a partial lower bound when it diverges).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub finite: bool,
    pub value: f64,
}

/// Evaluates `∫_0^{1/2} uσ²/(B - B(0) - su) + ∫_{1/2}^1 (1-u)σ²/(…)` after the
/// substitutions `u = e^{-v}` and `1 - u = e^{-v}`.
///
/// A half diverges when its transformed integrand has not decayed at
/// `v = 600` (`u ≈ 1e-261`), or when a partial integral exceeds `1e6`.
pub fn moment_condition(spec: &FluxDiffusionSpec, quad_tol: f64) -> Result<MomentCheck> {
    let check = check_oleinik(|u| spec.flux.eval(u), 1001)?;
    if !check.admissible {
        return Err(domain("moment condition needs the Oleĭnik condition"));
    }
    let halves: [(&Poly, &Poly); 2] = [(&spec.margin, &spec.sigma2), (&spec.margin_reflected, &spec.sigma2_reflected)];
    let mut total = 0.0;
    let mut finite = true;
    const V_TAIL: f64 = 600.0;
    for (margin, sigma2) in halves {
        // With w = e^{-v}: w σ²(w) / g(w) · w dv.
        let f = |v: f64| {
            let w = (-v).exp();
            let g = margin.eval(w);
            if w == 0.0 || g == 0.0 {
                return 0.0;
            }
            w * w * sigma2.eval(w) / g
        };
        let ln2 = std::f64::consts::LN_2;
        let tail = {
            let w = (-V_TAIL).exp();
            w * w * sigma2.eval(w) / margin.eval(w)
        };
        if !(tail.abs() < 1e-100) {
            finite = false;
            let partial = integrate(f, ln2, V_TAIL, quad_tol, quad_tol)?;
            total += partial.value;
            continue;
        }
        let q = integrate_to_infinity(f, ln2, 0.1 * quad_tol, 0.1 * quad_tol)?;
        if q.value > 1e6 {
            finite = false;
        }
        total += q.value;
    }
    Ok(MomentCheck { finite, value: total })
}

/// `δ = ∫(u0 - φ) dx`, by the trapezoid rule on the union of both grids
/// (exact for the piecewise-linear CDFs).
///
/// With this sign, `∫(u0(x) - φ(x + δ)) dx = 0`.
pub fn phase_shift_delta(u0: &GridCdf, phi: &GridCdf) -> Result<f64> {
    let mut xs: Vec<f64> = u0.grid().iter().chain(phi.grid()).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let diff = |x: f64| u0.eval(x) - phi.eval(x);
    let (first, last) = (diff(xs[0]), diff(xs[xs.len() - 1]));
    if first.abs() > 1e-6 || last.abs() > 1e-6 {
        return Err(domain(format!(
            "u0 - φ does not vanish at the grid ends ({first}, {last}); the difference is not integrable"
        )));
    }
    Ok(xs.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (diff(w[0]) + diff(w[1]))).sum())
}

/// `N` particles kept sorted; particle of rank `i` sees the CDF level
/// `(i + 1/2)/N`.
#[derive(Debug, Clone)]
pub struct RankedParticleSystem {
    positions: Vec<f64>,
    time: f64,
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl RankedParticleSystem {
    pub fn new(spec: &FluxDiffusionSpec, mut positions: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(usage("ranked particle system needs N >= 2"));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(domain("particle positions must be finite"));
        }
        positions.sort_by(f64::total_cmp);
        let n = positions.len();
        let levels = (0..n).map(|i| (i as f64 + 0.5) / n as f64);
        Ok(Self {
            drift: levels.clone().map(|u| spec.drift.eval(u)).collect(),
            sigma: levels.map(|u| spec.sigma2.eval(u).max(0.0).sqrt()).collect(),
            positions,
            time: 0.0,
        })
    }

    /// Sorted positions.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.len() as f64
    }

    pub fn empirical(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.positions.clone()).expect("finite, non-empty")
    }

    /// One Euler-Maruyama step; `noise[i]` is the standard normal draw for
    /// rank `i`.
    pub fn step_with_noise(&mut self, dt: f64, noise: &[f64]) -> Result<()> {
        if noise.len() != self.len() {
            return Err(usage("one noise draw per particle is required"));
        }
        let sq = dt.sqrt();
        for (i, x) in self.positions.iter_mut().enumerate() {
            *x += self.drift[i] * dt + self.sigma[i] * sq * noise[i];
        }
        if self.positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Integration { step: 0, time: self.time, reason: "non-finite particle".into() });
        }
        self.positions.sort_by(f64::total_cmp);
        self.time += dt;
        Ok(())
    }

    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> Result<()> {
        let noise: Vec<f64> = (0..self.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.step_with_noise(dt, &noise)
    }
}

/// Sorted snapshots at `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(domain("need dt > 0 and horizon >= 0"));
    }
    Ok((horizon / dt).round() as usize)
}

/// Runs the ranked system to `horizon`, recording every `record_every` steps
/// (and at time 0).
pub fn simulate_ranked_particles<R: Rng + ?Sized>(
    spec: &FluxDiffusionSpec,
    initial: Vec<f64>,
    horizon: f64,
    dt: f64,
    record_every: usize,
    rng: &mut R,
) -> Result<ParticleTrajectory> {
    let n_steps = step_count(horizon, dt)?;
    let record_every = record_every.max(1);
    let mut sys = RankedParticleSystem::new(spec, initial)?;
    let mut out = ParticleTrajectory { times: vec![0.0], snapshots: vec![sys.positions.clone()] };
    for k in 1..=n_steps {
        sys.step(dt, rng)?;
        if k % record_every == 0 || k == n_steps {
            out.times.push(k as f64 * dt);
            out.snapshots.push(sys.positions.clone());
        }
    }
    Ok(out)
}

/// `W_p(t)` between two ranked systems driven rank by rank by one noise
/// stream. `distances[j][k]` is the order `orders[j]` at `times[k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionTable {
    pub times: Vec<f64>,
    pub orders: Vec<f64>,
    pub distances: Vec<Vec<f64>>,
    pub l1_cdf: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn check_contraction<R: Rng + ?Sized>(
    spec: &FluxDiffusionSpec,
    u0: Vec<f64>,
    v0: Vec<f64>,
    orders: &[f64],
    horizon: f64,
    dt: f64,
    record_every: usize,
    rng: &mut R,
) -> Result<ContractionTable> {
    if u0.len() != v0.len() {
        return Err(usage("coupled systems need matched particle counts"));
    }
    let n_steps = step_count(horizon, dt)?;
    let record_every = record_every.max(1);
    let mut a = RankedParticleSystem::new(spec, u0)?;
    let mut b = RankedParticleSystem::new(spec, v0)?;
    let mut table = ContractionTable {
        times: Vec::new(),
        orders: orders.to_vec(),
        distances: vec![Vec::new(); orders.len()],
        l1_cdf: Vec::new(),
    };
    let mut record = |t: f64, a: &RankedParticleSystem, b: &RankedParticleSystem| -> Result<()> {
        let (ea, eb) = (a.empirical(), b.empirical());
        table.times.push(t);
        for (j, &p) in orders.iter().enumerate() {
            table.distances[j].push(wasserstein_p_samples(&ea, &eb, p)?);
        }
        table.l1_cdf.push(l1_cdf_distance(&ea, &eb));
        Ok(())
    };
    record(0.0, &a, &b)?;
    let mut noise = vec![0.0; a.len()];
    for k in 1..=n_steps {
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        a.step_with_noise(dt, &noise)?;
        b.step_with_noise(dt, &noise)?;
        if k % record_every == 0 || k == n_steps {
            record(k as f64 * dt, &a, &b)?;
        }
    }
    Ok(table)
}

/// Time derivative of `W_p(u, v)^p` predicted by the quantile equation,
/// `-(p(p-1)/2) ∫ σ²(w)|u⁻¹ - v⁻¹|^{p-2}(∂u⁻¹ - ∂v⁻¹)²/(∂u⁻¹ ∂v⁻¹) dw`.
///
/// Quantile slopes are centered differences of half-width `2/n_quantiles`;
/// the midpoint rule runs over the levels where that stencil stays in `(0, 1)`.
pub fn dissipation_rate(u: &GridCdf, v: &GridCdf, spec: &FluxDiffusionSpec, p: f64, n_quantiles: usize) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(domain(format!("dissipation formula needs p >= 2, got {p}")));
    }
    if n_quantiles < 8 {
        return Err(usage("dissipation rate needs at least 8 quantile levels"));
    }
    let n = n_quantiles as f64;
    let h = 2.0 / n;
    let mut sum = 0.0;
    for k in 0..n_quantiles {
        let w = (k as f64 + 0.5) / n;
        if w - h <= 0.0 || w + h >= 1.0 {
            continue;
        }
        let du = (u.quantile_unchecked(w + h) - u.quantile_unchecked(w - h)) / (2.0 * h);
        let dv = (v.quantile_unchecked(w + h) - v.quantile_unchecked(w - h)) / (2.0 * h);
        if !(du > 0.0 && dv > 0.0) {
            return Err(domain(format!("quantile slope is not positive at w = {w}")));
        }
        let gap = (u.quantile_unchecked(w) - v.quantile_unchecked(w)).abs();
        let weight = if p == 2.0 { 1.0 } else { gap.powf(p - 2.0) };
        sum += spec.sigma2.eval(w) * weight * (du - dv).powi(2) / (du * dv);
    }
    Ok(-0.5 * p * (p - 1.0) * sum / n)
}

/// `W_q` between the particle law at `t` and the wave `u_∞(· - st)` with the
/// same expectation. `distances[j][k]` is order `orders[j]` at `times[k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub times: Vec<f64>,
    pub orders: Vec<f64>,
    pub distances: Vec<Vec<f64>>,
    pub delta: f64,
    pub delta_residual: f64,
    pub speed: f64,
}

/// Evolves `initial` (a sample of `u0`) and tracks its distance to the
/// shifted wave in the moving frame.
#[allow(clippy::too_many_arguments)]
pub fn convergence_to_wave<R: Rng + ?Sized>(
    spec: &FluxDiffusionSpec,
    wave: &WaveProfile,
    u0: &GridCdf,
    initial: Vec<f64>,
    orders: &[f64],
    horizon: f64,
    dt: f64,
    record_every: usize,
    rng: &mut R,
) -> Result<ConvergenceTable> {
    let moment = moment_condition(spec, 1e-10)?;
    if !moment.finite {
        return Err(domain("the wave has no first moment; convergence is not defined"));
    }
    let delta = phase_shift_delta(u0, wave.cdf())?;
    let u_inf = wave.cdf().translated(-delta);
    let delta_residual = phase_shift_delta(u0, &u_inf)?;
    let traj = simulate_ranked_particles(spec, initial, horizon, dt, record_every, rng)?;
    let mut distances = vec![Vec::with_capacity(traj.times.len()); orders.len()];
    for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
        let target = u_inf.translated(spec.speed * t);
        let emp = EmpiricalMeasure::new(snap.clone())?;
        for (j, &q) in orders.iter().enumerate() {
            distances[j].push(wasserstein_p_samples_cdf(&emp, &target, q, 4)?);
        }
    }
    Ok(ConvergenceTable {
        times: traj.times,
        orders: orders.to_vec(),
        distances,
        delta,
        delta_residual,
        speed: spec.speed,
    })
}

/// Uniform grid of `n` nodes on `[a, b]`.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Particles at the quantile levels `(i + 1/2)/N` of `cdf`.
pub fn quantile_sample(cdf: &GridCdf, n: usize) -> Vec<f64> {
    (0..n).map(|i| cdf.quantile_unchecked((i as f64 + 0.5) / n as f64)).collect()
}
