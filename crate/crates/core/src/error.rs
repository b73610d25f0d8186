use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?} (expected {expected:?})")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("frame matrix has {found} columns but the alphabet has {expected} symbols")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("truncated frame file: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite log-probability at frame {frame}, symbol {symbol}")]
    NonFinite { frame: usize, symbol: usize },
    #[error("positive log-probability at frame {frame}, symbol {symbol}")]
    PositiveLogProb { frame: usize, symbol: usize },
    #[error("frame {frame} sums to {sum} in probability space")]
    Unnormalized { frame: usize, sum: f64 },
    #[error("frame matrix must contain at least one frame")]
    EmptyMatrix,
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("character {0:?} is not in the alphabet")]
    UnknownChar(char),
    #[error("hypothesis of {chars} characters cannot be aligned to {frames} frames")]
    Infeasible { chars: usize, frames: usize },
    #[error("duplicate line id {0:?}")]
    DuplicateLineId(String),
    #[error("malformed manifest at line {line}: {message}")]
    MalformedManifest { line: usize, message: String },
    #[error("invalid record {line_id:?}: {message}")]
    InvalidRecord { line_id: String, message: String },
    #[error("language model weight is {0} but no language model was supplied")]
    MissingLm(f64),
    #[error("language model does not cover alphabet character {0:?}")]
    LmVocabulary(char),
    #[error("malformed language model file: {0}")]
    MalformedLm(String),
    #[error("the inliers-rate measure needs a fitted Gaussian; run the fit pass first")]
    MissingFit,
    #[error("record {0:?} has no confidence score")]
    MissingConfidence(String),
    #[error("record {0:?} has no reference transcript")]
    MissingReference(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
