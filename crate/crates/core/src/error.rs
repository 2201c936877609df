use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank deficient: {which} has row rank {rank}, expected {expected}")]
    RankDeficient {
        which: &'static str,
        rank: usize,
        expected: usize,
    },

    #[error("batch too small: {samples} samples, need at least {required}")]
    BatchTooSmall { samples: usize, required: usize },

    #[error("rollout diverged at step {step}")]
    DivergedRollout { step: usize },

    #[error("numerical divergence in {0}")]
    NumericalDivergence(String),

    #[error("insufficient data: buffer holds {available}, requested {requested}")]
    InsufficientData { available: usize, requested: usize },

    #[error("environment diverged: non-finite state {0:?}")]
    EnvDiverged(Vec<f64>),

    #[error("Riccati iteration did not converge after {0} iterations")]
    OracleDiverged(usize),

    #[error("finite-difference oracle: {0}")]
    Oracle(String),

    #[error("insufficient history: {have} update iterations, need at least {need}")]
    InsufficientHistory { have: usize, need: usize },

    #[error("config error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 1 check failure, 2 configuration, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::NumericalDivergence(_)
            | Error::DivergedRollout { .. }
            | Error::EnvDiverged(_)
            | Error::OracleDiverged(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fails with `InvalidInput` unless `got == want`.
pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what}: length {got}, expected {want}"
        )))
    }
}
