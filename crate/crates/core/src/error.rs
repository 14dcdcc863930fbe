use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The objective became NaN or infinite; carries the state at the failing iteration.
    #[error("solver diverged at iteration {iteration}: objective {objective}, lambda_t {lambda_t}, rank {rank}")]
    Diverged {
        iteration: usize,
        objective: f64,
        lambda_t: f64,
        rank: usize,
    },

    #[error("instance too large to densify: {rows}x{cols} exceeds cap of {cap} entries")]
    DensifyCap { rows: usize, cols: usize, cap: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical kind (divergence, densification refusal).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Diverged { .. } | Error::DensifyCap { .. } => true,
            Error::Context { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
