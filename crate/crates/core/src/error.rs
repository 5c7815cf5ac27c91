use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel mismatch between expansions")]
    KernelMismatch,

    #[error("matrix is not positive definite (n = {0})")]
    NotPositiveDefinite(usize),

    #[error("design error: {0}")]
    Design(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for the command line: 2 for invalid input or
    /// configuration, 3 for numerical failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidKernel(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::KernelMismatch
            | Error::Design(_)
            | Error::Config(_)
            | Error::Json(_) => 2,
            Error::NonFinite(_) | Error::NotPositiveDefinite(_) | Error::Numerical(_) => 3,
            Error::Io(_) | Error::Csv(_) => 4,
        }
    }

    /// Short category name used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "numerical",
            _ => "io",
        }
    }
}
