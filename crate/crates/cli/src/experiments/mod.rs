//! Runnable experiments, one per registry entry.

pub mod bandit;
pub mod fbm;
pub mod kuramoto;
pub mod waves;

use crate::config::Params;
use crate::error::HarnessError;
use crate::report::ReportBuilder;

/// Inputs of a single experiment run.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub params: &'a Params,
    pub seed: u64,
    pub replicas: usize,
}

pub type RunFn = fn(&RunContext) -> Result<ReportBuilder, HarnessError>;

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Sample mean and its standard error.
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
