use std::path::PathBuf;

use thiserror::Error;

use crate::numkernel::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid sizes, labels, or parameters.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("linear solver did not converge: {report}")]
    SolverFailure { report: SolveReport },

    /// Cholesky breakdown in a dense factorization.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("coarse system is indefinite (smallest pivot {value:e})")]
    IndefiniteCoarse { value: f64 },

    #[error("active set iteration did not terminate after {iterations} steps ({} nodes would still change)", .oscillating.len())]
    NonTermination {
        iterations: usize,
        /// Contact nodes whose status would change in the next step.
        oscillating: Vec<usize>,
    },

    #[error("projected Gauss-Seidel did not converge after {sweeps} sweeps (last change {last_change:e})")]
    OracleNonConvergence { sweeps: usize, last_change: f64 },

    #[error("reference solution identically zero")]
    ZeroReference,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with a context frame (module, operation, indices).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit status for command-line use: 2 for configuration and
    /// input problems, 4 for active-set non-termination, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Io { .. } | Error::Parse { .. } => 2,
            Error::NonTermination { .. } => 4,
            _ => 3,
        }
    }

    /// Innermost error below any context frames.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context_with<F: FnOnce() -> String>(self, f: F) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context_with<F: FnOnce() -> String>(self, f: F) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root() {
        let e = Error::config("bad").context("reading").context("run");
        assert_eq!(e.exit_code(), 2);
        assert_eq!(e.to_string(), "run: reading: configuration error: bad");
        let e = Error::NonTermination {
            iterations: 20,
            oscillating: vec![3],
        }
        .context("cem");
        assert_eq!(e.exit_code(), 4);
        assert_eq!(Error::IndefiniteCoarse { value: -1.0 }.exit_code(), 3);
    }
}
