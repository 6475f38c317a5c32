//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Matrix or vector shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An embedding with zero L2 norm cannot be normalized.
    #[error("zero-norm embedding at view {view}, time {time}, detection {det}")]
    ZeroNorm { view: usize, time: u32, det: usize },

    /// A box with non-positive width or height.
    #[error("invalid box: width and height must be positive (got w={w}, h={h})")]
    InvalidBox { w: f64, h: f64 },

    /// A numeric routine failed to converge or produced non-finite values.
    #[error("numeric failure in {routine} (input hash {input_hash:016x})")]
    Numeric { routine: &'static str, input_hash: u64 },

    /// Malformed content in a data file.
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    /// Inconsistent data set (manifest, index, layout).
    #[error("data error: {0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            _ => 2,
        }
    }
}
