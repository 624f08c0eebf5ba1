use std::path::PathBuf;

use thiserror::Error;

use crate::types::StreamId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no training traces supplied")]
    EmptyTraces,

    #[error("radio map has no locations")]
    EmptyRadioMap,

    #[error("radio map needs at least one stream")]
    NoStreams,

    #[error("location `{location}` has no samples for stream {stream}")]
    MissingStream { location: String, stream: StreamId },

    #[error("sample {value} dBm on stream {stream} is outside [{min}, {max}]")]
    OutOfRangeSample {
        stream: StreamId,
        value: i32,
        min: i32,
        max: i32,
    },

    #[error("value {value} dBm is outside [{min}, {max}]")]
    OutOfRangeValue { value: i32, min: i32, max: i32 },

    #[error("invalid rssi range [{min}, {max}]")]
    InvalidRange { min: i32, max: i32 },

    #[error("smoothing floor {floor} must lie in (0, 1/{width})")]
    InvalidSmoothing { floor: f64, width: usize },

    #[error("duplicate location id `{0}`")]
    DuplicateLocation(String),

    #[error("duplicate stream {0}")]
    DuplicateStream(StreamId),

    #[error("location `{0}` has non-finite coordinates")]
    NonFiniteCoordinate(String),

    #[error("unknown location `{0}`")]
    UnknownLocation(String),

    #[error("unknown stream {0}")]
    UnknownStream(StreamId),

    #[error("stream {stream} has {got} samples in window, expected {expected}")]
    WindowLength {
        stream: StreamId,
        got: usize,
        expected: usize,
    },

    #[error("signal window must contain at least one stream and m >= 1")]
    EmptyWindow,

    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),

    #[error("prior has {got} weights for {expected} locations, or a weight is not positive")]
    InvalidPrior { got: usize, expected: usize },

    #[error("k = {k} must be in [1, {locations}]")]
    InvalidK { k: usize, locations: usize },

    #[error("w must be >= 1")]
    InvalidW,

    #[error("estimate history is empty")]
    EmptyHistory,

    #[error("trace `{trace}` has {available} samples on {stream}, fewer than m = {m}")]
    InsufficientSamples {
        trace: String,
        stream: StreamId,
        available: usize,
        m: usize,
    },

    #[error("no distance errors to summarize")]
    EmptyErrors,

    #[error("percentile fraction {0} outside [0, 1]")]
    InvalidFraction(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("label `{0}` contains a reserved character (',', ':', ';', '=', '#' or whitespace)")]
    InvalidLabel(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: unsupported format version `{version}`")]
    UnsupportedVersion { path: PathBuf, version: String },

    #[error("{path}: {source}")]
    Context {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Attach the file an error came from.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Parse { .. } | Error::Io { .. } | Error::Context { .. }) => e,
            e => Error::Context {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }
}
