use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the texture pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },

    #[error("unsupported image format in {path}: {color}; expected 8-bit grayscale or RGB")]
    UnsupportedBitDepth { path: PathBuf, color: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("dimension overflow: {0}")]
    DimOverflow(String),

    #[error("unsupported tensor rank {0}, expected 3")]
    BadRank(u32),

    #[error("duplicate weight name {0:?}")]
    DuplicateName(String),

    #[error("missing weight {0:?}")]
    MissingWeight(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("input too small: {0}")]
    TooSmall(String),

    #[error("degenerate region: global average feature has zero norm")]
    DegenerateRegion,

    #[error("degenerate quantization: similarity is constant")]
    DegenerateQuantization,

    #[error("empty encoding: no pixel carries weight")]
    EmptyEncoding,

    #[error("singular covariance: Cholesky failed at pivot {0}")]
    SingularCovariance(usize),

    #[error("probabilities not normalized at pixel {pixel}: sum {sum}")]
    NotNormalized { pixel: usize, sum: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
