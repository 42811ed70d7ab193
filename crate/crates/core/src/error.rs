use thiserror::Error;

/// Errors produced by the solvers, the simulator and the data loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("EV location {0} is outside [0, 1]")]
    LocationOutOfRange(f64),

    #[error("degenerate market: both quality-cost margins are non-positive (A: {delta_a}, B: {delta_b})")]
    DegenerateMarket { delta_a: f64, delta_b: f64 },

    #[error("dataset has no usable rows")]
    EmptyDataset,

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}
