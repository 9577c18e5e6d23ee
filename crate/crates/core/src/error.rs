use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read config file {}: {source}", path.display())]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    /// `line` is zero when the offending value came from a built-in default.
    #[error("{}invalid value for `{key}`: {message}", line_prefix(*.line))]
    InvalidParam {
        key: String,
        line: usize,
        message: String,
    },

    #[error("{op}: {message}")]
    Domain { op: &'static str, message: String },

    #[error(
        "equilibrium did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian in {context}")]
    SingularJacobian { context: String },

    #[error("integration failed at t = {time:.6e} s: {message}")]
    Integration { time: f64, message: String },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("eigenvalue computation did not converge")]
    Eigen,

    #[error("tuning failed: {0}")]
    Tuning(String),
}

fn line_prefix(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("line {line}: ")
    }
}

impl Error {
    pub(crate) fn domain(op: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            op,
            message: message.into(),
        }
    }
}
