//! Small numerical toolkit: adaptive Gauss-Kronrod quadrature, bracketed
//! root finding and Runge-Kutta integrators.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_SEGMENTS: usize = 20_000;

/// Result of an adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    resabs: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_sum = kronrod.abs();
    for j in 0..7 {
        let dx = half * XGK[j];
        fv1[j] = f(center - dx);
        fv2[j] = f(center + dx);
        kronrod += WGK[j] * (fv1[j] + fv2[j]);
        abs_sum += WGK[j] * (fv1[j].abs() + fv2[j].abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (fv1[j] + fv2[j]);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = kronrod * half;
    let asc = asc * half.abs();
    let mut err = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    let resabs = abs_sum * half.abs();
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (value, err, resabs)
}

/// Globally adaptive Gauss-Kronrod quadrature of `f` over `[a, b]`.
///
/// Stops once the summed error estimate is below
/// `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quadrature> {
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    if a > b {
        let q = integrate(f, b, a, abs_tol, rel_tol)?;
        return Ok(Quadrature { value: -q.value, ..q });
    }
    let (value, error, resabs) = kronrod15(&f, a, b);
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error, resabs });
    let mut total = value;
    let mut total_err = error;
    let mut total_abs = resabs;
    // Tolerances below the rounding floor of the rule cannot be met.
    while total_err > abs_tol.max(rel_tol * total.abs()).max(100.0 * f64::EPSILON * total_abs) {
        if heap.len() >= MAX_SEGMENTS {
            return Err(Error::Solver(format!(
                "quadrature on [{a}, {b}] did not converge: estimate {total}, error {total_err}"
            )));
        }
        let seg = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval collapsed to adjacent floats; accept what we have.
            heap.push(seg);
            break;
        }
        let (v1, e1, r1) = kronrod15(&f, seg.a, mid);
        let (v2, e2, r2) = kronrod15(&f, mid, seg.b);
        evaluations += 30;
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        total_abs += r1 + r2 - seg.resabs;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            error: e1,
            resabs: r1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            error: e2,
            resabs: r2,
        });
    }
    // Re-sum to shed accumulated cancellation in the running totals.
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(Quadrature {
        value,
        error,
        evaluations,
    })
}

/// Integral of `f` over `[a, ∞)` through the map `x = a + t / (1 - t)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quadrature> {
    integrate(
        |t: f64| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let x = a + t / s;
            let v = f(x) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        abs_tol,
        rel_tol,
    )
}

/// Bisection for a sign change of `f` on `[lo, hi]`, to absolute width `x_tol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Solver(format!(
            "no sign change on [{lo}, {hi}]: f = {flo}, {fhi}"
        )));
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= x_tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Classic fixed-step RK4 step for `y' = f(t, y)` on a vector state.
pub fn rk4_step<F>(f: &F, t: f64, y: &[f64], h: f64, out: &mut [f64])
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, &tmp, &mut k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn rk4_scalar<F: Fn(f64) -> f64>(f: &F, y: f64, h: f64) -> f64 {
    let k1 = f(y);
    let k2 = f(y + 0.5 * h * k1);
    let k3 = f(y + 0.5 * h * k2);
    let k4 = f(y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Adaptive RK4 (step doubling with Richardson correction) for an autonomous
/// scalar ODE `y' = f(y)`, reporting the solution at each of `outputs`.
///
/// `outputs` must be monotone in the direction of integration (increasing or
/// decreasing away from `x0`). The local error is held below
/// `tol * max(|y|, floor)`, so tails that decay to zero keep relative accuracy.
pub fn adaptive_rk4_autonomous<F: Fn(f64) -> f64>(
    f: F,
    x0: f64,
    y0: f64,
    outputs: &[f64],
    tol: f64,
    floor: f64,
) -> Result<Vec<f64>> {
    let mut x = x0;
    let mut y = y0;
    let mut out = Vec::with_capacity(outputs.len());
    let mut h: f64 = 1e-3;
    for &target in outputs {
        let dir = if target >= x { 1.0 } else { -1.0 };
        let mut steps = 0usize;
        while (target - x) * dir > 0.0 {
            steps += 1;
            if steps > 10_000_000 {
                return Err(Error::Solver("adaptive RK4 exceeded step budget".into()));
            }
            let remaining = (target - x).abs();
            let step = h.min(remaining);
            let full = rk4_scalar(&f, y, dir * step);
            let half = rk4_scalar(&f, y, dir * step * 0.5);
            let two_half = rk4_scalar(&f, half, dir * step * 0.5);
            let err = (two_half - full).abs() / 15.0;
            let scale = tol * two_half.abs().max(floor);
            if !two_half.is_finite() {
                return Err(Error::Solver(format!("non-finite state near x = {x}")));
            }
            if err <= scale || step < 1e-12 {
                x = if step == remaining { target } else { x + dir * step };
                y = two_half + (two_half - full) / 15.0;
                let grow = if err == 0.0 {
                    4.0
                } else {
                    (0.9 * (scale / err).powf(0.2)).clamp(0.2, 4.0)
                };
                h = (step * grow).max(1e-12);
            } else {
                h = step * (0.9 * (scale / err).powf(0.2)).clamp(0.1, 0.9);
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`; `r_squared` is 1 when `y` is constant.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Usage(format!(
            "line fit needs matching inputs with >= 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 {
        return Err(Error::Usage("line fit needs at least two distinct x".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - slope * xi - intercept;
            r * r
        })
        .sum();
    let r_squared = if syy <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reversed_limits_flip_sign() {
        let g = |u: f64| 1.0 / (2.0 * u * (1.0 - u));
        let lo = 1.0 / (1.0 + 16.0f64.exp());
        let fwd = integrate(g, lo, 0.5, 1e-12, 1e-12).unwrap().value;
        let rev = integrate(g, 0.5, lo, 1e-12, 1e-12).unwrap().value;
        assert!((fwd - 8.0).abs() < 1e-10);
        assert_eq!(rev, -fwd);
    }

    #[test]
    fn kronrod_polynomials_exact() {
        let q = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-14, 0.0).unwrap();
        // ∫ x^5 - 3x^2 = [x^6/6 - x^3] from -1 to 2
        let exact = (64.0 / 6.0 - 8.0) - (1.0 / 6.0 + 1.0);
        assert_abs_diff_eq!(q.value, exact, epsilon = 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        let q = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert_abs_diff_eq!(q.value, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn semi_infinite() {
        let q = integrate_to_infinity(|x: f64| (-x).exp(), 1.0, 1e-13, 0.0).unwrap();
        assert_abs_diff_eq!(q.value, (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn bisection_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert_abs_diff_eq!(r, 2f64.sqrt(), epsilon = 1e-14);
        assert!(bisect(|x| x * x + 1.0, 0.0, 1.0, 1e-9).is_err());
    }

    #[test]
    fn adaptive_rk4_logistic() {
        let xs: Vec<f64> = (1..=40).map(|i| i as f64 * 0.5).collect();
        let ys = adaptive_rk4_autonomous(|y| 2.0 * y * (1.0 - y), 0.0, 0.5, &xs, 1e-13, 1e-300)
            .unwrap();
        for (x, y) in xs.iter().zip(ys) {
            let exact = 1.0 / (1.0 + (-2.0 * x).exp());
            assert_abs_diff_eq!(y, exact, epsilon = 1e-11);
        }
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = fit_line(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.intercept, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-14);
    }
}
