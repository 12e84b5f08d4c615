use thiserror::Error;

/// Errors produced by the respiratory pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive fs: {0}")]
    NonPositiveFs(f64),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate trajectory: zero variance")]
    DegenerateTrajectory,

    #[error("signal too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("unsatisfiable sampling rate: fs={fs} Hz cannot carry {rr} breaths/min")]
    UnsatisfiableFs { fs: f64, rr: f64 },

    #[error("all-zero calibration segment")]
    ZeroCalibration,

    #[error("pairwise lag graph is disconnected")]
    DisconnectedLags,

    #[error("sampling rate mismatch: {0} Hz vs {1} Hz")]
    FsMismatch(f64, f64),

    #[error("target rate {target} outside range [{lo}, {hi}]")]
    TargetOutOfRange { target: f64, lo: f64, hi: f64 },

    #[error("no rate to redistribute")]
    NoRate,

    #[error("unusable segment: no valid samples")]
    UnusableSegment,

    #[error("single-class training input")]
    SingleClass,

    #[error("missing class in training data: {0}")]
    MissingClass(String),

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("insufficient source material: {0}")]
    InsufficientSource(String),

    #[error("record format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
