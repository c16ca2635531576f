use thiserror::Error;

pub type Result<T> = std::result::Result<T, RkmError>;

/// Every failure the library can report. The CLI maps these onto exit codes
/// through [`RkmError::exit_code`].
#[derive(Debug, Error)]
pub enum RkmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data validation failed: {0}")]
    DataValidation(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("degenerate scatter: {0}")]
    DegenerateScatter(String),

    #[error("MCD subset too small: n_mcd = {n_mcd}, need at least {min}")]
    SubsetTooSmall { n_mcd: usize, min: usize },

    #[error("symmetric eigensolver failed: {0}")]
    EigFailure(String),

    #[error("spectrum too short: requested {requested} components, only {achievable} above tolerance")]
    ShortSpectrum { requested: usize, achievable: usize },

    #[error("numerical fault: {0}")]
    NumericalFault(String),

    #[error("training diverged at epoch {epoch} (total loss {loss:e})")]
    DivergenceAbort { epoch: usize, loss: f64 },

    #[error("latent Gaussian fit failed: {0}")]
    FitError(String),

    #[error("checkpoint version mismatch: found {found}, supported {supported}")]
    VersionMismatch { found: String, supported: u32 },

    #[error("checkpoint checksum mismatch in section `{section}`")]
    ChecksumMismatch { section: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RkmError {
    /// 1 = usage/config, 2 = data, 3 = numerical.
    pub fn exit_code(&self) -> i32 {
        use RkmError::*;
        match self {
            InvalidArgument(_) | Config(_) | UnknownConfigKey(_) => 1,
            DataValidation(_)
            | ShapeMismatch(_)
            | Parse { .. }
            | Format(_)
            | VersionMismatch { .. }
            | ChecksumMismatch { .. }
            | Io(_) => 2,
            DegenerateScatter(_)
            | SubsetTooSmall { .. }
            | EigFailure(_)
            | ShortSpectrum { .. }
            | NumericalFault(_)
            | DivergenceAbort { .. }
            | FitError(_) => 3,
        }
    }
}

pub(crate) fn shape_err(what: impl Into<String>) -> RkmError {
    RkmError::ShapeMismatch(what.into())
}
