use thiserror::Error;

/// Errors of the benchmark harness.
#[derive(Debug, Error)]
pub enum BenchError {
    /// Invalid scenario configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Failure raised by the reformulation or solver.
    #[error("solver error: {0}")]
    Solver(#[from] smpc_core::Error),

    /// Filesystem failure while writing results.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed configuration file.
    #[error("config file error: {0}")]
    ConfigFile(#[from] serde_json::Error),
}

impl BenchError {
    /// Process exit code associated with the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::ConfigFile(_) => 2,
            BenchError::Solver(_) | BenchError::Io(_) => 3,
        }
    }
}
