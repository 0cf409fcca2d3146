use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no calibration data")]
    NoCalibrationData,

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("bad magic: not an FPQ1 container")]
    BadMagic,

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),

    #[error("dangling tensor reference `{0}`")]
    DanglingTensor(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by NaN/inf values in the data path.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Calibration(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
