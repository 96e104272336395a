use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by scenario loading, the ODE solvers and the simulators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("malformed scenario: {0}")]
    Parse(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: String,
        found: String,
    },

    #[error("{assumption} violated at node {node}: {detail}")]
    Assumption {
        assumption: &'static str,
        node: usize,
        detail: String,
    },

    /// Frobenius norm of an ODE solution exceeded the blow-up threshold.
    #[error("finite escape at node {node} (t = {time}): norm {norm:.3e}")]
    FiniteEscape { node: usize, time: f64, norm: f64 },

    #[error("non-finite value at node {node} (t = {time}){}", path_suffix(*.path))]
    NonFinite {
        node: usize,
        time: f64,
        path: Option<usize>,
    },

    #[error("singular {what} at node {node}")]
    Singular { what: &'static str, node: usize },

    #[error("path `{name}` has {found} samples, expected {expected}")]
    PathLength {
        name: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("disturbance energy is zero; the gain ratio is undefined")]
    ZeroDisturbance,

    #[error("invalid disturbance policy: {0}")]
    Policy(String),
}

fn path_suffix(path: Option<usize>) -> String {
    path.map(|p| format!(" on path {p}")).unwrap_or_default()
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
