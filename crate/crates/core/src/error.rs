use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Failure while reading or validating an input table.
    #[error("load error: {0}")]
    Load(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A function was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A design column is constant or linearly dependent on the others.
    #[error("degenerate covariate '{column}': {reason}")]
    DegenerateCovariate { column: String, reason: String },

    #[error("model fit did not converge: {0}")]
    NonConvergence(String),

    #[error("singular design matrix: {0}")]
    Singular(String),

    #[error("bootstrap failed: {failed} of {total} replicates failed ({reason})")]
    Bootstrap {
        failed: usize,
        total: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input or usage).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence(_) | Error::Singular(_) | Error::Bootstrap { .. }
        )
    }
}
