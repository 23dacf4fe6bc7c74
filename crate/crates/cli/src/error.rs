use thiserror::Error;

/// Failures that stop an experiment before it produces a report.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown experiment `{0}` (see `ergodic-lab list`)")]
    UnknownExperiment(String),
    #[error("invalid parameters [{}]: {}", keys.join(", "), problems.join("; "))]
    Validation { keys: Vec<String>, problems: Vec<String> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ergodic_lab_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output error: {0}")]
    Output(String),
}
