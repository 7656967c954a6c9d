use std::fmt;

use tgbench::{AnalysisError, BackendError, GraphError, KernelError};

/// Exit code for usage errors: bad flags, invalid graph specs, bad plans.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while running: backend, I/O, watchdog.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Usage(format!("invalid spec: {e}"))
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::ConfigMismatch(_) | BackendError::Graph(_) => {
                CliError::Usage(format!("invalid spec: {e}"))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::EmptyKernel | KernelError::TargetTooShort(_) => CliError::usage(e),
            other => CliError::runtime(other),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Backend(b) => b.into(),
            AnalysisError::Graph(g) => g.into(),
            AnalysisError::EmptyGrainList | AnalysisError::ZeroRepetitions => CliError::usage(e),
            other => CliError::runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::runtime(e)
    }
}
