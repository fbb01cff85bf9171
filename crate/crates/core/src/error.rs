use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("{what} out of range: {value} not in [{lo}, {hi}]")]
    OutOfRange { what: &'static str, value: i64, lo: i64, hi: i64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("missing forward cache for backward pass")]
    MissingCache,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("empty sample set: {0}")]
    EmptySamples(&'static str),

    #[error("infinite SNR: {0}")]
    InfiniteSnr(String),

    #[error("degenerate kernel bandwidth (all points identical)")]
    DegenerateBandwidth,

    #[error("template pool has {pool} entries, {requested} rules requested")]
    PoolTooSmall { pool: usize, requested: usize },

    #[error("invalid concept: {0}")]
    InvalidConcept(String),

    #[error("unknown task preset `{0}`")]
    UnknownTask(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error ({path}): {msg}", path = path.display())]
    Checkpoint { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn out_of_range(what: &'static str, value: i64, lo: i64, hi: i64) -> Self {
        Error::OutOfRange { what, value, lo, hi }
    }

    /// Whether this error stems from a numeric failure (divergence, non-finite data).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::NonFinite(_) | Error::DegenerateBandwidth | Error::InfiniteSnr(_)
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::InvalidConfig(_) | Error::UnknownTask(_) | Error::InvalidConcept(_)
        )
    }
}
