use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("blend weights requested from an empty neighbourhood")]
    EmptyNeighborhood,

    #[error("degenerate skinning blend (condition estimate {condition:.3e})")]
    DegenerateWarp { condition: f64 },

    #[error("invalid normal: {0}")]
    InvalidNormal(String),

    #[error("point is not on the surface (|d| = {residual:.3e})")]
    NotOnSurface { residual: f64 },

    #[error("index ({row}, {col}) out of range for {rows}x{cols} grid")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("{path}: malformed {format} data at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        format: &'static str,
        offset: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("no observations: {0}")]
    NoObservations(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Parse error carrying serde's line and column.
    pub fn json(path: impl Into<PathBuf>, err: serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
