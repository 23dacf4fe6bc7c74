//! One-dimensional probability metrics.
//!
//! On the line, the optimal coupling between two laws is the quantile
//! coupling, so `W_p` reduces to an `L^p` distance between quantile
//! functions. Sample clouds use order statistics; grid CDFs use a midpoint
//! quantile rule `w_k = (k - 1/2) / n`, which never touches `w = 0` or `w = 1`
//! where the pseudo-inverse may be unbounded.

use serde::Serialize;

use crate::error::{domain, usage, Result};
use crate::numeric::fit_line;

/// A sorted, non-empty cloud of finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(usage("empirical measure needs at least one sample"));
        }
        if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
            return Err(domain(format!("non-finite sample {bad}")));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }


    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Returns the measure translated by `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x + shift).collect(),
        }
    }

    /// Empirical CDF at `x` (right-continuous).
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.samples.partition_point(|&s| s <= x);
        k as f64 / self.samples.len() as f64
    }

    /// Grid representation of the empirical CDF.
    ///
    /// Each atom becomes a ramp of width at most `1e-9 * max(1, |x|)`, so the
    /// pseudo-inverse of the result matches the sample quantiles to that width.
    pub fn to_grid_cdf(&self) -> GridCdf {
        let n = self.samples.len() as f64;
        let mut atoms: Vec<(f64, usize)> = Vec::new();
        for &x in &self.samples {
            match atoms.last_mut() {
                Some((v, c)) if *v == x => *c += 1,
                _ => atoms.push((x, 1)),
            }
        }
        let mut grid = Vec::with_capacity(2 * atoms.len());
        let mut values = Vec::with_capacity(2 * atoms.len());
        let mut cum = 0usize;
        for (j, &(v, c)) in atoms.iter().enumerate() {
            let mut width = 1e-9 * v.abs().max(1.0);
            if let Some(&(next, _)) = atoms.get(j + 1) {
                width = width.min(0.5 * (next - v));
            }
            let top = v + width;
            let room = top > v && atoms.get(j + 1).is_none_or(|&(next, _)| top < next);
            if room {
                grid.push(v);
                values.push(cum as f64 / n);
            }
            cum += c;
            grid.push(if room { top } else { v });
            values.push(cum as f64 / n);
        }
        GridCdf { grid, values }
    }
}

/// A CDF tabulated on a strictly increasing grid, linear between nodes.
///
/// The represented law puts an atom of mass `values[0]` at the first node
/// and an atom of mass `1 - values[last]` at the last node; it is zero to the
/// left of the grid and one to the right.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCdf {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl GridCdf {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(usage(format!(
                "grid CDF needs equal, non-empty grid and values (got {} and {})",
                grid.len(),
                values.len()
            )));
        }
        if grid.iter().any(|x| !x.is_finite()) {
            return Err(domain("grid contains non-finite nodes"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(domain("grid must be strictly increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(domain("CDF values must lie in [0, 1]"));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(domain("CDF values must be nondecreasing"));
        }
        Ok(Self { grid, values })
    }

    /// Tabulates `f` on `grid`, clamping to `[0, 1]` and enforcing monotonicity
    /// against rounding (running maximum).
    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut running = 0.0f64;
        let values = grid
            .iter()
            .map(|&x| {
                running = running.max(f(x).clamp(0.0, 1.0));
                running
            })
            .collect();
        Self::new(grid, values)
    }

    /// Builds the CDF whose quantile function passes through `(w_k, x_k)`.
    pub fn from_quantiles(levels: &[f64], positions: &[f64]) -> Result<Self> {
        Self::new(positions.to_vec(), levels.to_vec())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the CDF at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x < self.grid[0] {
            return 0.0;
        }
        if x > self.grid[n - 1] {
            return 1.0;
        }
        let i = self.grid.partition_point(|&g| g <= x);
        if i == 0 {
            return self.values[0];
        }
        if i == n {
            return self.values[n - 1];
        }
        let (x0, x1) = (self.grid[i - 1], self.grid[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Translates the grid by `shift`: the result is `x -> F(x - shift)`.
    pub fn translated(&self, shift: f64) -> Self {
        Self {
            grid: self.grid.iter().map(|x| x + shift).collect(),
            values: self.values.clone(),
        }
    }

    /// Largest distance of the end values from the limits 0 and 1.
    pub fn tail_defect(&self) -> f64 {
        self.values[0].max(1.0 - self.values[self.values.len() - 1])
    }

    /// The quantile at level `w`, see [`pseudo_inverse`].
    pub fn quantile(&self, w: f64) -> Result<f64> {
        pseudo_inverse(self, w)
    }

    pub(crate) fn quantile_unchecked(&self, w: f64) -> f64 {
        let n = self.values.len();
        let i = self.values.partition_point(|&v| v < w);
        if i == 0 {
            return self.grid[0];
        }
        if i == n {
            return self.grid[n - 1];
        }
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        let (x0, x1) = (self.grid[i - 1], self.grid[i]);
        x0 + (w - v0) / (v1 - v0) * (x1 - x0)
    }
}

/// `inf { x : F(x) >= w }` for `w` in `(0, 1)`, with `F` linear between nodes.
pub fn pseudo_inverse(f: &GridCdf, w: f64) -> Result<f64> {
    if !(w > 0.0 && w < 1.0) {
        return Err(domain(format!("quantile level {w} outside (0, 1)")));
    }
    Ok(f.quantile_unchecked(w))
}

fn check_order(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(domain(format!("Wasserstein order {p} must be >= 1")))
    }
}

/// `W_p` between two equal-size sample clouds via order statistics.
pub fn wasserstein_p_samples(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_order(p)?;
    if mu.len() != nu.len() {
        return Err(usage(format!(
            "sample W_p needs equal sizes, got {} and {}; resample upstream",
            mu.len(),
            nu.len()
        )));
    }
    let sum: f64 = mu
        .samples()
        .iter()
        .zip(nu.samples())
        .map(|(x, y)| (x - y).abs().powf(p))
        .sum();
    Ok((sum / mu.len() as f64).powf(1.0 / p))
}

/// `W_p` between two grid CDFs on `n_quantiles` midpoint quantile levels.
pub fn wasserstein_p_cdf(f: &GridCdf, g: &GridCdf, p: f64, n_quantiles: usize) -> Result<f64> {
    check_order(p)?;
    if n_quantiles < 2 {
        return Err(usage("need at least two quantile levels"));
    }
    let n = n_quantiles as f64;
    let sum: f64 = (1..=n_quantiles)
        .map(|k| {
            let w = (k as f64 - 0.5) / n;
            (f.quantile_unchecked(w) - g.quantile_unchecked(w)).abs().powf(p)
        })
        .sum();
    Ok((sum / n).powf(1.0 / p))
}

/// `W_p` between a sample cloud and a grid CDF.
///
/// Each order-statistic cell `((i-1)/n, i/n]` is integrated with `refine`
/// midpoint levels.
pub fn wasserstein_p_samples_cdf(
    mu: &EmpiricalMeasure,
    f: &GridCdf,
    p: f64,
    refine: usize,
) -> Result<f64> {
    check_order(p)?;
    let refine = refine.max(1);
    let n = mu.len();
    let total = (n * refine) as f64;
    let mut sum = 0.0;
    for (i, &x) in mu.samples().iter().enumerate() {
        for j in 0..refine {
            let w = ((i * refine + j) as f64 + 0.5) / total;
            sum += (x - f.quantile_unchecked(w)).abs().powf(p);
        }
    }
    Ok((sum / total).powf(1.0 / p))
}

/// `∫ |F_mu - F_nu| dx` computed exactly by merging the two sample clouds.
pub fn l1_cdf_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let (a, b) = (mu.samples(), nu.samples());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut last = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - last);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        last = next;
    }
    total
}

/// Estimated total variation from per-pair coalescence flags: the fraction
/// of pairs that have *not* coalesced.
pub fn coalescence_fraction(coalesced: &[bool]) -> Result<f64> {
    if coalesced.is_empty() {
        return Err(usage("no coupled pairs"));
    }
    let open = coalesced.iter().filter(|&&c| !c).count();
    Ok(open as f64 / coalesced.len() as f64)
}

/// Exponential decay fit `log v ≈ intercept - rate * t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_exp_rate(times: &[f64], values: &[f64]) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(usage("times and values differ in length"));
    }
    if times.len() < 3 {
        return Err(usage("rate fit needs at least three points"));
    }
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0)) {
        return Err(domain(format!("rate fit needs positive values, got {v}")));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let line = fit_line(times, &logs)?;
    Ok(RateFit {
        rate: -line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
    })
}

/// Circular `W_1` from the difference `D = F - G` of two CDFs sampled at the
/// midpoints of a uniform partition of the circle into cells of width `cell`.
///
/// On the circle `W_1 = min_a ∫ |D - a|`, attained at the median of `D`.
pub fn circular_wasserstein1(cdf_difference: &[f64], cell: f64) -> f64 {
    let mut sorted = cdf_difference.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    cdf_difference.iter().map(|d| (d - median).abs()).sum::<f64>() * cell
}
