use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep index {index} out of range for a schedule of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("degenerate step: from and to are both timestep {0}")]
    DegenerateStep(usize),
    #[error("step from t={from} to t={to} runs in the wrong direction")]
    WrongDirection { from: usize, to: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sigma is zero at timestep {0}")]
    ZeroSigma(usize),
    #[error("alpha is zero at timestep {0}")]
    ZeroAlpha(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("order-{order} step needs {needed} model outputs in history, found {found}")]
    InsufficientHistory {
        order: usize,
        needed: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("record variant {variant} cannot be replayed in {mode} mode")]
    VariantModeMismatch { variant: String, mode: String },
    #[error("inversion record has no latent at timestep {0}")]
    MissingLatent(usize),
    #[error("condition {0} not supported by this predictor")]
    UnsupportedCondition(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_same_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
