//! Fractional Brownian motion and SDEs driven by it.
//!
//! Paths are drawn exactly in law by circulant embedding of the fractional
//! Gaussian noise covariance (Davies-Harte). For `H > 1/2` the SDE is a
//! pathwise Young equation, integrated here by the explicit Euler scheme.

use std::f64::consts::PI;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{domain, usage, Error, Result};
use crate::numeric::integrate;
use crate::rng::{run_replicas, Stream};

/// An fBm sample on a uniform grid of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub hurst: f64,
    pub times: Vec<f64>,
    /// `values[i][k]` is coordinate `i` at `times[k]`; every coordinate starts at 0.
    pub values: Vec<Vec<f64>>,
}

impl FbmPath {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Keeps every `factor`-th node.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps() % factor != 0 {
            return Err(usage(format!("cannot subsample {} steps by {factor}", self.n_steps())));
        }
        Ok(Self {
            hurst: self.hurst,
            times: self.times.iter().step_by(factor).copied().collect(),
            values: self.values.iter().map(|c| c.iter().step_by(factor).copied().collect()).collect(),
        })
    }
}

/// Autocovariance of unit-step fractional Gaussian noise.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let k = k as f64;
    let h2 = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Analytic fBm covariance `½(t^{2H} + s^{2H} - |t - s|^{2H})`.
pub fn fbm_covariance(hurst: f64, t: f64, s: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2))
}

enum Method {
    Circulant { sqrt_eigen: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky { lower: Vec<f64> },
}

/// Reusable sampler for fBm on a fixed grid.
pub struct FbmGenerator {
    hurst: f64,
    n_steps: usize,
    horizon: f64,
    method: Method,
}

impl std::fmt::Debug for FbmGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmGenerator")
            .field("hurst", &self.hurst)
            .field("n_steps", &self.n_steps)
            .field("horizon", &self.horizon)
            .field("circulant", &self.uses_circulant())
            .finish()
    }
}

impl FbmGenerator {
    pub fn new(hurst: f64, n_steps: usize, horizon: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(domain(format!("Hurst index must lie in (0, 1), got {hurst}")));
        }
        if n_steps < 2 {
            return Err(domain("need at least two steps"));
        }
        if !(horizon > 0.0) {
            return Err(domain(format!("horizon must be positive, got {horizon}")));
        }
        let method = match circulant_eigenvalues(hurst, n_steps) {
            Some(sqrt_eigen) => {
                let fft = FftPlanner::new().plan_fft_forward(sqrt_eigen.len());
                Method::Circulant { sqrt_eigen, fft }
            }
            None => Method::Cholesky { lower: toeplitz_cholesky(hurst, n_steps)? },
        };
        Ok(Self { hurst, n_steps, horizon, method })
    }

    /// Builds a generator that always uses the dense Cholesky factor.
    pub fn new_cholesky(hurst: f64, n_steps: usize, horizon: f64) -> Result<Self> {
        let mut g = Self::new(hurst, n_steps, horizon)?;
        g.method = Method::Cholesky { lower: toeplitz_cholesky(hurst, n_steps)? };
        Ok(g)
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn uses_circulant(&self) -> bool {
        matches!(self.method, Method::Circulant { .. })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Draws `d` independent coordinates.
    pub fn sample(&self, d: usize, rng: &mut Stream) -> FbmPath {
        let n = self.n_steps;
        let scale = self.dt().powf(self.hurst);
        let mut increments: Vec<Vec<f64>> = Vec::with_capacity(d);
        match &self.method {
            Method::Circulant { sqrt_eigen, fft } => {
                let m = sqrt_eigen.len();
                let mut buf = vec![Complex64::new(0.0, 0.0); m];
                while increments.len() < d {
                    for (b, &s) in buf.iter_mut().zip(sqrt_eigen) {
                        let re: f64 = StandardNormal.sample(rng);
                        let im: f64 = StandardNormal.sample(rng);
                        *b = Complex64::new(s * re, s * im);
                    }
                    fft.process(&mut buf);
                    increments.push(buf[..n].iter().map(|z| z.re * scale).collect());
                    if increments.len() < d {
                        increments.push(buf[..n].iter().map(|z| z.im * scale).collect());
                    }
                }
            }
            Method::Cholesky { lower } => {
                for _ in 0..d {
                    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                    let inc = (0..n)
                        .map(|i| scale * (0..=i).map(|j| lower[i * n + j] * z[j]).sum::<f64>())
                        .collect();
                    increments.push(inc);
                }
            }
        }
        let values = increments
            .into_iter()
            .map(|inc| {
                let mut acc = 0.0;
                std::iter::once(0.0)
                    .chain(inc.into_iter().map(|x| {
                        acc += x;
                        acc
                    }))
                    .collect()
            })
            .collect();
        let dt = self.dt();
        FbmPath {
            hurst: self.hurst,
            times: (0..=n).map(|k| k as f64 * dt).collect(),
            values,
        }
    }
}

/// `sqrt(λ_j / m)` for the minimal circulant embedding of size `2n`, or
/// `None` if some eigenvalue is materially negative.
fn circulant_eigenvalues(hurst: f64, n: usize) -> Option<Vec<f64>> {
    let m = 2 * n;
    let mut row: Vec<Complex64> = (0..m)
        .map(|k| Complex64::new(fgn_autocovariance(hurst, if k <= n { k } else { m - k }), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    let tol = 1e-10 * row.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    if row.iter().any(|z| z.re < -tol) {
        return None;
    }
    Some(row.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect())
}

fn toeplitz_cholesky(hurst: f64, n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = fgn_autocovariance(hurst, i - j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Solver("fGn covariance is not positive definite".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// One-shot fBm draw.
pub fn generate_fbm(hurst: f64, n_steps: usize, horizon: f64, d: usize, rng: &mut Stream) -> Result<FbmPath> {
    Ok(FbmGenerator::new(hurst, n_steps, horizon)?.sample(d, rng))
}

/// A map `R^d -> R^k` writing into an output buffer.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `dX = b(X) dt + σ(X) dB^H` in dimension `d`; `σ` is written row-major.
#[derive(Clone)]
pub struct FsdeModel {
    dim: usize,
    drift: VectorField,
    diffusion: VectorField,
}

impl std::fmt::Debug for FsdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FsdeModel").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl FsdeModel {
    pub fn new(dim: usize, drift: VectorField, diffusion: VectorField) -> Self {
        Self { dim, drift, diffusion }
    }

    /// Constant diffusion `sigma * Id`.
    pub fn additive(dim: usize, drift: VectorField, sigma: f64) -> Self {
        let diffusion: VectorField = Arc::new(move |_x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..dim {
                out[i * dim + i] = sigma;
            }
        });
        Self { dim, drift, diffusion }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }
}

/// Linear drift `b(x) = -x`.
pub fn linear_drift() -> VectorField {
    Arc::new(|x: &[f64], out: &mut [f64]| {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    })
}

/// Zero drift.
pub fn zero_drift() -> VectorField {
    Arc::new(|_: &[f64], out: &mut [f64]| out.fill(0.0))
}

/// Planar drift `b(z) = -z - ρ cos(θ_z) z⊥` with `z⊥ = (-z_2, z_1)`.
pub fn rotation_drift(rho: f64) -> VectorField {
    Arc::new(move |z: &[f64], out: &mut [f64]| {
        let r = z[0].hypot(z[1]);
        let c = if r > 0.0 { z[0] / r } else { 0.0 };
        out[0] = -z[0] + rho * c * z[1];
        out[1] = -z[1] - rho * c * z[0];
    })
}

/// Largest `(b(z) - b(y) | z - y) / |z - y|²` over pairs of a square grid of
/// side `2 * half_width` with `n` points per axis, and the pair attaining it.
///
/// `b` is positively homogeneous, so a positive value rules out any bound
/// `(b(z) - b(y) | z - y) <= β - κ|z - y|²`: scaling the pair by `λ` grows
/// the left side like `λ²` while the constant `β` stays fixed.
pub fn contraction_witness(drift: &VectorField, half_width: f64, n: usize) -> (f64, [f64; 2], [f64; 2]) {
    let pts: Vec<[f64; 2]> = (0..n)
        .flat_map(|i| {
            (0..n).map(move |j| {
                let a = -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64;
                let b = -half_width + 2.0 * half_width * j as f64 / (n - 1) as f64;
                [a, b]
            })
        })
        .collect();
    let fields: Vec<[f64; 2]> = pts
        .iter()
        .map(|z| {
            let mut o = [0.0; 2];
            drift(z, &mut o);
            o
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, [0.0; 2], [0.0; 2]);
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            let dz = [pts[a][0] - pts[b][0], pts[a][1] - pts[b][1]];
            let db = [fields[a][0] - fields[b][0], fields[a][1] - fields[b][1]];
            let ratio = (db[0] * dz[0] + db[1] * dz[1]) / (dz[0] * dz[0] + dz[1] * dz[1]);
            if ratio > best.0 {
                best = (ratio, pts[a], pts[b]);
            }
        }
    }
    best
}

/// States of an SDE on the path grid; `states[k]` is the state at `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

const OVERFLOW_GUARD: f64 = 1e8;

/// Explicit Euler: `X_{k+1} = X_k + b(X_k) Δt + σ(X_k) ΔB_k`.
pub fn integrate_fsde(model: &FsdeModel, x0: &[f64], path: &FbmPath) -> Result<Trajectory> {
    let d = model.dim;
    if !(path.hurst > 0.5) {
        return Err(domain(format!("Young integration needs H > 1/2, got {}", path.hurst)));
    }
    if x0.len() != d || path.dim() != d {
        return Err(usage(format!(
            "dimension mismatch: model {d}, start {}, path {}",
            x0.len(),
            path.dim()
        )));
    }
    let mut x = x0.to_vec();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    let mut states = Vec::with_capacity(path.times.len());
    states.push(x.clone());
    for k in 0..path.n_steps() {
        let dt = path.times[k + 1] - path.times[k];
        model.drift(&x, &mut b);
        model.diffusion(&x, &mut s);
        let mut norm2 = 0.0;
        let next: Vec<f64> = (0..d)
            .map(|i| {
                let noise: f64 = (0..d).map(|j| s[i * d + j] * (path.values[j][k + 1] - path.values[j][k])).sum();
                let v = x[i] + b[i] * dt + noise;
                norm2 += v * v;
                v
            })
            .collect();
        if !(norm2.sqrt() <= OVERFLOW_GUARD) {
            return Err(Error::Integration {
                step: k + 1,
                time: path.times[k + 1],
                reason: format!("|X| = {:e} exceeds the overflow guard {OVERFLOW_GUARD:e}", norm2.sqrt()),
            });
        }
        x = next;
        states.push(x.clone());
    }
    Ok(Trajectory { times: path.times.clone(), states })
}

/// Hölder seminorm `max |B_t - B_s| / (t - s)^θ` over grid pairs in `[a, b]`,
/// with the Euclidean norm across coordinates.
pub fn holder_norm(path: &FbmPath, theta: f64, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(domain(format!("need a < b, got [{a}, {b}]")));
    }
    let lo = path.times.partition_point(|&t| t < a - 1e-12 * b.abs().max(1.0));
    let hi = path.times.partition_point(|&t| t <= b + 1e-12 * b.abs().max(1.0));
    if hi < lo + 2 {
        return Err(domain(format!("interval [{a}, {b}] holds fewer than two grid nodes")));
    }
    let n = hi - lo;
    let dt = path.dt();
    // Diameter bound over the window for pruning long lags.
    let diameter = path
        .values
        .iter()
        .map(|c| {
            let w = &c[lo..hi];
            let (mn, mx) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), &v| (mn.min(v), mx.max(v)));
            (mx - mn).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let mut best = 0.0f64;
    for lag in 1..n {
        let denom = (lag as f64 * dt).powf(theta);
        if diameter / denom <= best {
            break;
        }
        for i in lo..hi - lag {
            let d2: f64 = path.values.iter().map(|c| (c[i + lag] - c[i]).powi(2)).sum();
            best = best.max(d2.sqrt() / denom);
        }
    }
    Ok(best)
}

/// A scalar function of the state.
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A Lyapunov function with the exponent and Hölder index used in the
/// one-step contraction inequality `V^r(X_1) <= ρ V^r(x) + C(1 + ‖B‖_θ)`.
#[derive(Clone)]
pub struct LyapunovSpec {
    pub v: ScalarField,
    pub r: f64,
    pub theta: f64,
}

impl std::fmt::Debug for LyapunovSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LyapunovSpec").field("r", &self.r).field("theta", &self.theta).finish_non_exhaustive()
    }
}

impl LyapunovSpec {
    /// `V(x) = 1 + |x|²`.
    pub fn quadratic(r: f64, theta: f64) -> Self {
        Self {
            v: Arc::new(|x: &[f64]| 1.0 + x.iter().map(|v| v * v).sum::<f64>()),
            r,
            theta,
        }
    }
}

/// Fitted contraction constants and their out-of-sample violation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub rho_hat: f64,
    pub c_hat: f64,
    pub violation_rate: f64,
    pub feasible: bool,
    pub n_samples: usize,
}

/// Starting points on a radial grid: `n_directions` equally spaced angles in
/// the first coordinate plane for each radius.
pub fn radial_starts(dim: usize, radii: &[f64], n_directions: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for &r in radii {
        for j in 0..n_directions {
            let mut x = vec![0.0; dim];
            let angle = 2.0 * PI * j as f64 / n_directions as f64;
            x[0] = r * angle.cos();
            if dim > 1 {
                x[1] = r * angle.sin();
            }
            out.push(x);
        }
    }
    out
}

fn lyapunov_samples(
    model: &FsdeModel,
    spec: &LyapunovSpec,
    generator: &FbmGenerator,
    starts: &[Vec<f64>],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let per_start = run_replicas(seed, starts.len() * n_paths, |k, rng| {
        let x = &starts[k / n_paths];
        let path = generator.sample(model.dim, rng);
        let traj = integrate_fsde(model, x, &path)?;
        let end = traj.states.last().expect("trajectory is never empty");
        let norm = holder_norm(&path, spec.theta, 0.0, 1.0)?;
        Ok(((spec.v)(x).powf(spec.r), (spec.v)(end).powf(spec.r), norm))
    });
    per_start.into_iter().collect()
}

/// Fits `ρ̂` and `Ĉ` in `V^r(X_1) <= ρ̂ V^r(x) + Ĉ(1 + ‖B‖_θ)` on a radial
/// grid of starting points and checks the pair on a fresh batch.
///
/// `ρ̂` is the largest ratio `V^r(X_1)/V^r(x)` over starts on the outermost
/// radius, where the constant term is negligible; `Ĉ` is then the smallest
/// constant covering every sample. The generator must span `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn check_lyapunov_contraction(
    model: &FsdeModel,
    spec: &LyapunovSpec,
    generator: &FbmGenerator,
    radii: &[f64],
    n_directions: usize,
    n_paths: usize,
    seed: u64,
) -> Result<LyapunovReport> {
    if !(generator.hurst > 0.5) {
        return Err(domain("contraction check needs H > 1/2"));
    }
    if (generator.horizon - 1.0).abs() > 1e-12 {
        return Err(usage("the contraction inequality is stated over unit time"));
    }
    if radii.is_empty() || n_directions == 0 || n_paths == 0 {
        return Err(usage("need radii, directions and paths"));
    }
    let starts = radial_starts(model.dim, radii, n_directions);
    let fit = lyapunov_samples(model, spec, generator, &starts, n_paths, seed)?;
    let r_max = radii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let outer = starts.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).map(|r| (r - r_max).abs() < 1e-12 * r_max.max(1.0));
    let outer: Vec<bool> = outer.flat_map(|o| std::iter::repeat_n(o, n_paths)).collect();
    let rho_hat = fit
        .iter()
        .zip(&outer)
        .filter(|(_, &o)| o)
        .map(|((v0, v1, _), _)| v1 / v0)
        .fold(0.0, f64::max);
    let c_hat = fit.iter().map(|(v0, v1, b)| (v1 - rho_hat * v0).max(0.0) / (1.0 + b)).fold(0.0, f64::max);
    let check = lyapunov_samples(model, spec, generator, &starts, n_paths, crate::rng::sub_seed(seed, 1))?;
    let violations = check.iter().filter(|(v0, v1, b)| *v1 > rho_hat * v0 + c_hat * (1.0 + b)).count();
    Ok(LyapunovReport {
        rho_hat,
        c_hat,
        violation_rate: violations as f64 / check.len() as f64,
        feasible: rho_hat < 1.0,
        n_samples: fit.len(),
    })
}

/// `(R_T g)(t) = ∫ t^{1/2-H} (T-s)^{H-1/2} / (t+T-s) g(s) ds` for `g`
/// supported on `[-support, 0]`.
pub fn evaluate_rt<G: Fn(f64) -> f64>(g: G, support: f64, big_t: f64, t: f64, hurst: f64) -> Result<f64> {
    if !(t > 0.0 && big_t >= 0.0 && support >= 0.0) {
        return Err(domain("need t > 0, T >= 0 and a nonnegative support length"));
    }
    let pre = t.powf(0.5 - hurst);
    let q = integrate(
        |s| pre * (big_t - s).powf(hurst - 0.5) / (t + big_t - s) * g(s),
        -support,
        0.0,
        1e-13,
        1e-13,
    )?;
    if q.error > 1e-10 {
        return Err(Error::Solver(format!("R_T quadrature error {} above 1e-10", q.error)));
    }
    Ok(q.value)
}

/// Ensemble statistics of `V(X_t)` and `|X_t|` at observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicitySample {
    pub times: Vec<f64>,
    pub mean_v: Vec<f64>,
    pub se_v: Vec<f64>,
    /// `radii[j]` holds `|X|` over all paths at `times[j]`.
    pub radii: Vec<Vec<f64>>,
}

/// Runs `n_paths` solutions from `x0` on the generator grid and records
/// `V(X_t)` and `|X_t|` at every `stride`-th node.
pub fn ergodicity_sample(
    model: &FsdeModel,
    v: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    generator: &FbmGenerator,
    stride: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ErgodicitySample> {
    if stride == 0 || n_paths < 2 {
        return Err(usage("need a positive stride and at least two paths"));
    }
    let runs = run_replicas(seed, n_paths, |_, rng| {
        let path = generator.sample(model.dim, rng);
        integrate_fsde(model, x0, &path)
    });
    let runs: Vec<Trajectory> = runs.into_iter().collect::<Result<_>>()?;
    let idx: Vec<usize> = (0..runs[0].times.len()).step_by(stride).collect();
    let n = n_paths as f64;
    let mut out = ErgodicitySample { times: Vec::new(), mean_v: Vec::new(), se_v: Vec::new(), radii: Vec::new() };
    for &k in &idx {
        let vs: Vec<f64> = runs.iter().map(|r| v(&r.states[k])).collect();
        let m = vs.iter().sum::<f64>() / n;
        let var = vs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        out.times.push(runs[0].times[k]);
        out.mean_v.push(m);
        out.se_v.push((var / n).sqrt());
        out.radii.push(runs.iter().map(|r| r.states[k].iter().map(|c| c * c).sum::<f64>().sqrt()).collect());
    }
    Ok(out)
}
