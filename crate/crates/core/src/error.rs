use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("every weight is zero; nothing to normalize")]
    AllZeroMass,

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("measures live on different grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("row {row} loses {lost:.3e} of its mass outside the grid")]
    TruncationExcess { row: usize, lost: f64 },

    #[error("{what} ratio {ratio:.3e} exceeds the usable bound")]
    UnboundedRatio { what: &'static str, ratio: f64 },

    #[error("no inward drift: moment ratio {ratio:.6} at x = {witness}")]
    RecurrenceFailure { witness: f64, ratio: f64 },

    #[error("likelihood cannot be sampled: {0}")]
    NotSamplable(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
