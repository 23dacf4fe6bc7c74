//! The experiment registry and the `run` entry point.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{validate, ParamSpec};
use crate::error::HarnessError;
use crate::experiments::{bandit, fbm, kuramoto, waves, RunContext, RunFn};
use crate::report::{ConfigEcho, ExperimentReport};

/// A runnable experiment.
pub struct Experiment {
    pub name: &'static str,
    /// Library operation the experiment exercises, as `module::function`.
    pub operation: &'static str,
    pub claim: &'static str,
    pub params: fn() -> Vec<ParamSpec>,
    pub default_replicas: usize,
    pub min_replicas: usize,
    pub run: RunFn,
}

/// Serializable description of a registry entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentInfo {
    pub name: String,
    pub operation: String,
    pub claim: String,
    pub required_keys: Vec<String>,
    pub params: Vec<ParamSpec>,
    pub default_replicas: usize,
}

impl Experiment {
    pub fn info(&self) -> ExperimentInfo {
        let params = (self.params)();
        ExperimentInfo {
            name: self.name.into(),
            operation: self.operation.into(),
            claim: self.claim.into(),
            required_keys: params.iter().filter(|p| p.required()).map(|p| p.key.clone()).collect(),
            params,
            default_replicas: self.default_replicas,
        }
    }
}

const REGISTRY: &[Experiment] = &[
    Experiment {
        name: "bandit-w1",
        operation: "bandit::wasserstein_ensemble",
        claim: "W1 between two bandit laws decays like exp(-(p-q)t) under the monotone coupling",
        params: bandit::w1_params,
        default_replicas: 100_000,
        min_replicas: 2,
        run: bandit::w1,
    },
    Experiment {
        name: "bandit-mean",
        operation: "bandit::mean_at_t",
        claim: "E[Y_t] relaxes to q(1-p)/(p(p-q)) at rate p-q",
        params: bandit::mean_params,
        default_replicas: 100_000,
        min_replicas: 2,
        run: bandit::mean,
    },
    Experiment {
        name: "bandit-laplace",
        operation: "bandit::laplace_invariant",
        claim: "the invariant law has exponential moments exactly below u_M, given by the Laplace ODE",
        params: bandit::laplace_params,
        default_replicas: 100_000,
        min_replicas: 2,
        run: bandit::laplace,
    },
    Experiment {
        name: "bandit-tv",
        operation: "bandit::tv_experiment",
        claim: "the coalescent coupling gives total-variation decay at rate v",
        params: bandit::tv_params,
        default_replicas: 20_000,
        min_replicas: 2,
        run: bandit::tv,
    },
    Experiment {
        name: "bandit-moments",
        operation: "bandit::moment_system",
        claim: "moments of the coupled gap solve the closed triangular ODE hierarchy",
        params: bandit::moments_params,
        default_replicas: 100_000,
        min_replicas: 2,
        run: bandit::moments,
    },
    Experiment {
        name: "fbm-check",
        operation: "fbm::FbmGenerator::sample",
        claim: "circulant embedding draws fBm exactly in law",
        params: fbm::check_params,
        default_replicas: 100_000,
        min_replicas: 2,
        run: fbm::check,
    },
    Experiment {
        name: "fsde-lyapunov",
        operation: "fbm::check_lyapunov_contraction",
        claim: "the rotation-drift fSDE settles to a stationary regime with a contracting Lyapunov function",
        params: fbm::lyapunov_params,
        default_replicas: 16_000,
        min_replicas: 2,
        run: fbm::lyapunov,
    },
    Experiment {
        name: "rt-operator",
        operation: "fbm::evaluate_rt",
        claim: "the R_T kernel operator reduces to log((t+1)/t) in the Brownian case",
        params: fbm::rt_params,
        default_replicas: 1,
        min_replicas: 0,
        run: fbm::rt,
    },
    Experiment {
        name: "kuramoto-fixed-point",
        operation: "kuramoto::solve_fixed_point",
        claim: "r = Psi(2Kr) has only r = 0 for K <= 1 and a positive branch for K > 1",
        params: kuramoto::fixed_point_params,
        default_replicas: 1,
        min_replicas: 0,
        run: kuramoto::fixed_point,
    },
    Experiment {
        name: "kuramoto-spectrum",
        operation: "kuramoto::linearized_spectrum_uniform",
        claim: "the linearization at the uniform state has eigenvalues -(1-K)/2 and -k^2/2",
        params: kuramoto::spectrum_params,
        default_replicas: 1,
        min_replicas: 0,
        run: kuramoto::spectrum,
    },
    Experiment {
        name: "kuramoto-pde",
        operation: "kuramoto::solve_pde",
        claim: "the synchronized profiles are stationary and attract a perturbed uniform state for K > 1",
        params: kuramoto::pde_params,
        default_replicas: 1,
        min_replicas: 0,
        run: kuramoto::pde,
    },
    Experiment {
        name: "kuramoto-phase",
        operation: "kuramoto::phase_diffusion_experiment",
        claim: "the synchronization center diffuses on the time scale N",
        params: kuramoto::phase_params,
        default_replicas: 100,
        min_replicas: 3,
        run: kuramoto::phase,
    },
    Experiment {
        name: "waves-solve",
        operation: "waves::solve_wave",
        claim: "an Oleinik-admissible flux has a monotone traveling wave solving the profile ODE",
        params: waves::solve_params,
        default_replicas: 1,
        min_replicas: 0,
        run: waves::solve,
    },
    Experiment {
        name: "waves-moment",
        operation: "waves::moment_condition",
        claim: "the wave has a first moment exactly when the margin integral converges",
        params: waves::moment_params,
        default_replicas: 1,
        min_replicas: 0,
        run: waves::moment,
    },
    Experiment {
        name: "waves-contraction",
        operation: "waves::check_contraction",
        claim: "Wp between two coupled ranked particle systems does not increase",
        params: waves::contraction_params,
        default_replicas: 10,
        min_replicas: 2,
        run: waves::contraction,
    },
    Experiment {
        name: "waves-drift",
        operation: "waves::simulate_ranked_particles",
        claim: "the particle mean moves at the Rankine-Hugoniot speed",
        params: waves::drift_params,
        default_replicas: 20,
        min_replicas: 2,
        run: waves::drift,
    },
    Experiment {
        name: "waves-converge",
        operation: "waves::convergence_to_wave",
        claim: "the solution converges in W1 to the wave shifted by delta in the moving frame",
        params: waves::converge_params,
        default_replicas: 1,
        min_replicas: 0,
        run: waves::converge,
    },
];

pub fn registry() -> &'static [Experiment] {
    REGISTRY
}

pub fn find(name: &str) -> Result<&'static Experiment, HarnessError> {
    REGISTRY.iter().find(|e| e.name == name).ok_or_else(|| HarnessError::UnknownExperiment(name.into()))
}

pub fn list_experiments() -> Vec<ExperimentInfo> {
    REGISTRY.iter().map(Experiment::info).collect()
}

/// What to run: parameter overrides are raw `key=value` text, validated
/// against the experiment's declarations before anything is computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub overrides: BTreeMap<String, String>,
    pub seed: u64,
    /// `None` uses the experiment's default.
    pub replicas: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Self { experiment: experiment.into(), overrides: BTreeMap::new(), seed, replicas: None, out: None }
    }

    pub fn set(mut self, key: &str, value: impl ToString) -> Self {
        self.overrides.insert(key.into(), value.to_string());
        self
    }

    pub fn replicas(mut self, n: usize) -> Self {
        self.replicas = Some(n);
        self
    }
}

/// Runs one experiment. The report is a pure function of the config apart
/// from `duration_secs`.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let exp = find(&config.experiment)?;
    let params = validate(&(exp.params)(), &config.overrides)?;
    let replicas = config.replicas.unwrap_or(exp.default_replicas);
    if replicas < exp.min_replicas {
        return Err(HarnessError::Validation {
            keys: vec!["replicas".into()],
            problems: vec![format!("replicas: {} needs at least {}", exp.name, exp.min_replicas)],
        });
    }
    let start = Instant::now();
    let built = (exp.run)(&RunContext { params: &params, seed: config.seed, replicas })?;
    let report = ExperimentReport {
        config: ConfigEcho { experiment: exp.name.into(), seed: config.seed, replicas, params },
        tables: built.tables,
        summary: built.summary,
        checks: built.checks,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &config.out {
        write_tables(&report, dir)?;
    }
    Ok(report)
}

/// Writes `<dir>/<experiment>_<table>.csv` for every table and
/// `<dir>/<experiment>_summary.json`.
pub fn write_tables(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in &report.tables {
        let path = dir.join(format!("{}_{}.csv", report.config.experiment, t.name));
        t.write_csv(std::fs::File::create(&path)?)?;
        written.push(path);
    }
    let path = dir.join(format!("{}_summary.json", report.config.experiment));
    std::fs::write(&path, report.to_json())?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_kebab_case() {
        let mut names: Vec<&str> = REGISTRY.iter().map(|e| e.name).collect();
        assert!(names.iter().all(|n| n.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')));
        names.sort();
        names.dedup();
        assert_eq!(names.len(), REGISTRY.len());
    }

    #[test]
    fn defaults_validate() {
        for e in REGISTRY {
            let specs = (e.params)();
            let r = validate(&specs, &BTreeMap::new());
            if specs.iter().any(ParamSpec::required) {
                assert!(r.is_err(), "{}", e.name);
            } else {
                assert!(r.is_ok(), "{}: {:?}", e.name, r.err());
            }
        }
    }

    #[test]
    fn unknown_experiment_is_usage_error() {
        assert!(matches!(run(&ExperimentConfig::new("nope", 1)), Err(HarnessError::UnknownExperiment(_))));
    }
}
