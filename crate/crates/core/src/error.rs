use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("column `{column}` has zero variance")]
    ZeroVariance { column: String },

    #[error("label value {value} in row {row} is not 0 or 1")]
    NonBinaryLabel { row: usize, value: f64 },

    #[error("requested {requested} rows but only {available} are available")]
    SplitTooLarge { requested: usize, available: usize },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },

    #[error("point is already classified favorably (p = {probability})")]
    AlreadyPositive { probability: f64 },

    #[error("recourse is not valid; no counterfactual distance available")]
    InvalidRecourse,

    #[error("sample {index} is not strictly positive ({value})")]
    NonPositiveSample { index: usize, value: f64 },

    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("only one class present ({positives} members, {negatives} non-members)")]
    SingleClass { positives: usize, negatives: usize },

    #[error("epsilon must be nonnegative, got {0}")]
    NegativeEpsilon(f64),

    #[error("only {got} shadow samples survived; at least 2 are required")]
    TooFewShadowSamples { got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
