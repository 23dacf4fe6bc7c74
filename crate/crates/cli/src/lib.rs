//! Experiment harness: a registry of runnable experiments over
//! `ergodic-lab-core`, typed configuration, and CSV/JSON reports.
//!
//! ```no_run
//! use ergodic_lab::{run, ExperimentConfig};
//!
//! let report = run(&ExperimentConfig::new("kuramoto-fixed-point", 1).set("K", 2.0)).unwrap();
//! println!("r = {}", report.summary_value("r").unwrap());
//! ```

pub mod config;
pub mod error;
pub mod experiments;
pub mod registry;
pub mod report;

pub use config::{ParamKind, ParamSpec, ParamValue, Params};
pub use error::HarnessError;
pub use ergodic_lab_core::{derive_stream, Stream};
pub use registry::{find, list_experiments, registry, run, write_tables, Experiment, ExperimentConfig, ExperimentInfo};
pub use report::{Check, ExperimentReport, Table};
