use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gapless system: minimum band energy {min_gap:e} below threshold")]
    GaplessSystem { min_gap: f64 },

    #[error("link-variable Chern sum did not converge to an integer (raw = {raw})")]
    NonConvergent { raw: f64 },

    #[error("degenerate dynamics: maximum group velocity {velocity:e} too small for spreading")]
    DegenerateDynamics { velocity: f64 },

    #[error("class {label} never appeared within {draws} draws")]
    ClassUnreachable { label: i32, draws: u64 },

    #[error("domain mismatch: expected {expected}, found {found}")]
    DomainMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("too few samples to split: {0} (need at least 10)")]
    TooFewSamples(usize),

    #[error("bad magic in {context}")]
    BadMagic { context: String },

    #[error("truncated file: {context}")]
    TruncatedFile { context: String },

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("requested {requested} components but numerical rank is {rank}")]
    DegenerateRank { requested: usize, rank: usize },

    #[error("no C=1 -> C=0 transition in row m = {m}")]
    NoTransition { m: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

impl Error {
    /// Process exit status: 1 for bad input, 2 for physics or data-domain
    /// failures, 3 for file problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::ShapeMismatch(_) | Error::DimMismatch { .. } => 1,
            Error::Io { .. }
            | Error::Json { .. }
            | Error::BadMagic { .. }
            | Error::TruncatedFile { .. }
            | Error::VersionMismatch { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
