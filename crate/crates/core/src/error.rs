use thiserror::Error;

/// Errors produced by the solvers, simulators and file readers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {xi}) lies outside the triangle 0 <= xi <= x <= 1")]
    OutsideTriangle { x: f64, xi: f64 },

    #[error("query {x} lies outside [0, 1]")]
    OutsideInterval { x: f64 },

    #[error("empty integration segment")]
    EmptySegment,

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("near-singular pivot {pivot:e} in {context}")]
    SingularPivot { context: &'static str, pivot: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("CFL violation: dt = {dt:e} exceeds the stable limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("missing {0}")]
    Missing(&'static str),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("sample {index} failed: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
