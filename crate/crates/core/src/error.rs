use std::path::PathBuf;

/// Errors raised anywhere in the localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("non-finite CSI entry at packet {packet}, subcarrier {subcarrier}, pair {pair}")]
    NonFiniteCsi {
        packet: usize,
        subcarrier: usize,
        pair: usize,
    },

    #[error("zero-magnitude CSI entry at packet {packet}, subcarrier {subcarrier}, pair {pair}: phase undefined")]
    ZeroMagnitude {
        packet: usize,
        subcarrier: usize,
        pair: usize,
    },

    #[error("phase differencing needs at least 2 receive antennas, layout has {0}")]
    TooFewReceiveAntennas(usize),

    #[error("invalid antenna layout: {0}")]
    InvalidLayout(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),

    #[error("matrix is not positive definite after {escalations} ridge escalations (last ridge {ridge:e})")]
    NotPositiveDefinite { escalations: usize, ridge: f64 },

    #[error("symmetric eigensolver did not converge for eigenvalue {index} of {dim}")]
    NoConvergence { index: usize, dim: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown cell id {0}")]
    UnknownCell(u32),

    #[error("missing cell coverage: {0}")]
    MissingCoverage(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("unsupported schema_version {found} in {path} (this build reads version {supported})")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("checksum mismatch in {path}: stored {stored:08x}, computed {computed:08x}")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("malformed file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
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
