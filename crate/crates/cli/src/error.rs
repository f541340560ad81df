use std::fmt;

use turnpike_core::Error as CoreError;

/// Failure of a CLI run, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input data.
    Validation(String),
    /// The optimizer stopped before reaching the gradient tolerance.
    NonConvergence(String),
    /// An assumption check failed under `--require-pass`.
    CheckFailed(String),
    /// Anything else, mostly I/O.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::CheckFailed(_) => 4,
        }
    }

    pub fn io(what: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", what.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::NonConvergence(m) => write!(f, "not converged: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::MaxItersExceeded { .. } | CoreError::CgStalled { .. } => {
                CliError::NonConvergence(msg)
            }
            CoreError::SingularMatrix { .. } | CoreError::NotSymmetric { .. } => {
                CliError::Runtime(msg)
            }
            _ => CliError::Validation(msg),
        }
    }
}
