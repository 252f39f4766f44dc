use thiserror::Error;

use crate::problem::Violation;

#[derive(Debug, Error)]
pub enum MflqError {
    #[error("time {s} lies outside the horizon [{t0}, {t_end}]")]
    OutOfRange { s: f64, t0: f64, t_end: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("problem data failed validation ({} violation(s)): {}", .0.len(), summarize(.0))]
    Validation(Vec<Violation>),

    #[error("finite escape while integrating {what}: node {node} (s = {time}) exceeded the blow-up bound; last valid node {last_valid}")]
    FiniteEscape {
        what: &'static str,
        node: usize,
        time: f64,
        last_valid: usize,
    },

    #[error("invalid initial law: {0}")]
    InvalidLaw(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("quadratic program is unbounded below: {0}")]
    UnboundedBelow(String),

    #[error("document error at `{field}`: {message}")]
    Document { field: String, message: String },
}

fn summarize(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, MflqError>;
