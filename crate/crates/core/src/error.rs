//! Error taxonomy shared by the library and the command-line tool.
//!
//! Every failure is classified into one of four kinds so that callers (in
//! particular the CLI) can map errors onto stable process exit codes:
//!
//! * [`Error::Config`] — invalid usage, options, configuration files, or
//!   inconsistent shapes between user-supplied artifacts (exit code 2);
//! * [`Error::Data`] — malformed or missing input data (exit code 3);
//! * [`Error::Numerical`] — non-finite values, solver non-convergence, or
//!   degenerate inputs that make a quantity undefined (exit code 4);
//! * [`Error::Io`] — filesystem failures, reported with the offending path
//!   (treated as data problems, exit code 3).

use std::path::{Path, PathBuf};

use thiserror::Error;

/// Convenient alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the forecasting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid options, configuration, or inconsistent artifact shapes.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or semantically invalid input data.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure: non-finite values, non-convergence, degeneracy.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Filesystem failure while touching `path`.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Shape mismatch between two operands; a programming or wiring mistake,
    /// reported as configuration.
    pub fn shape(op: &str, a: (usize, usize), b: (usize, usize)) -> Self {
        Error::Config(format!(
            "shape mismatch in {op}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        ))
    }

    /// Stable process exit code for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(Error::config("x").exit_code(), 2);
        assert_eq!(Error::data("x").exit_code(), 3);
        assert_eq!(Error::numerical("x").exit_code(), 4);
        let io = Error::io(
            "/tmp/missing",
            std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        );
        assert_eq!(io.exit_code(), 3);
    }

    #[test]
    fn messages_carry_context() {
        let e = Error::shape("matmul", (2, 3), (4, 5));
        assert_eq!(
            e.to_string(),
            "configuration error: shape mismatch in matmul: 2x3 vs 4x5"
        );
        let io = Error::io(
            "/tmp/missing",
            std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        );
        assert!(io.to_string().contains("/tmp/missing"));
    }
}
