use std::path::PathBuf;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum AvbError {
    #[error("no fit supplied for model `{0}`")]
    MissingModelFit(String),

    #[error("non-finite objective: {0}")]
    NonFiniteObjective(String),

    #[error("degenerate box at coordinate {coord}: [{lo}, {hi}]")]
    DegenerateBox { coord: usize, lo: f64, hi: f64 },

    #[error("coordinate {coord} value {value} lies outside [-{bound}, {bound}]")]
    OutOfSupport {
        coord: usize,
        value: f64,
        bound: f64,
    },

    #[error("absolute continuity violated at index {0}")]
    AbsoluteContinuity(usize),

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numerical breakdown at iteration {iteration}: {reason}")]
    NumericalBreakdown { iteration: usize, reason: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AvbError>;

impl AvbError {
    pub(crate) fn shape(what: &'static str, expected: usize, found: usize) -> Self {
        AvbError::Shape {
            what,
            expected,
            found,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AvbError::Io {
            path: path.into(),
            source,
        }
    }
}
