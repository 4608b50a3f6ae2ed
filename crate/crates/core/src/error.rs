use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("target ({x:.4}, {y:.4}) is outside the reachable workspace")]
    UnreachableTarget { x: f64, y: f64 },

    #[error("inverse kinematics did not converge (residual {residual:.3e} after {iterations} iterations)")]
    Convergence { residual: f64, iterations: usize },

    #[error("unstable controller: dt * gain = {0:.4} must lie in (0, 2)")]
    Unstable(f64),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("all particle weights degenerate at timestep {timestep}")]
    DegenerateWeights { timestep: usize },

    #[error("weights are not normalized (sum {0})")]
    Unnormalized(f64),

    #[error("grounding failed for symbol {symbol}: {reason}")]
    GroundingFailure { symbol: u32, reason: String },

    #[error("no match for symbol {symbol} (best score {score:.3})")]
    MatchNotFound { symbol: u32, score: f64 },

    #[error("grounding failed for symbols {0:?}")]
    PartialGrounding(Vec<u32>),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("program syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error("malformed file {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for the command-line tool: 2 for bad
    /// configuration or arguments, 3 for a missing upstream file, 4 for a
    /// numerical failure and 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::Syntax { .. }
            | Error::Config(_)
            | Error::Statistics(_) => 2,
            Error::MissingInput(_) => 3,
            Error::UnreachableTarget { .. }
            | Error::Convergence { .. }
            | Error::Unstable(_)
            | Error::Divergence { .. }
            | Error::DegenerateWeights { .. }
            | Error::Unnormalized(_)
            | Error::GroundingFailure { .. }
            | Error::MatchNotFound { .. }
            | Error::PartialGrounding(_) => 4,
            Error::Format { .. } | Error::Io(_) => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
