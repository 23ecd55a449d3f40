use thiserror::Error;

/// Errors produced by the depth solving and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("depth must be positive (got {z})")]
    NonPositiveDepth { z: f64 },

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("box not fully projectable: vertex {index} has depth {z}")]
    BoxNotProjectable { index: usize, z: f64 },

    #[error("degenerate PnP configuration: {0}")]
    DegeneratePnp(String),

    #[error("variance must be positive (got {0})")]
    InvalidVariance(f64),

    #[error("sigma must be positive (got {0})")]
    InvalidSigma(f64),

    #[error("no usable depth: every estimate is invalid")]
    NoUsableDepth,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scene generation exhausted the resample budget ({budget} attempts for object {index})")]
    ResampleBudgetExhausted { index: usize, budget: usize },

    #[error("label parse error at line {line}, field {field}: {message}")]
    LabelParse {
        line: usize,
        field: usize,
        message: String,
    },

    #[error("calibration parse error: {0}")]
    CalibParse(String),

    #[error("label is not localizable: {0}")]
    NonLocalizable(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
