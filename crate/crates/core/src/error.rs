use std::path::PathBuf;

use crate::metrics::Reference;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pump parameter epsilon = {epsilon} is at or above the allowed limit {limit}")]
    AboveThreshold { epsilon: f64, limit: f64 },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("total round-trip loss is zero (infinite finesse)")]
    ZeroLoss,

    #[error("ratio must be positive to convert to dB, got {0}")]
    NonPositiveRatio(f64),

    #[error("drift matrix is singular at omega = {omega}")]
    Singular { omega: f64 },

    #[error("spectrum diverges near threshold (value {value:e} exceeds {limit:e})")]
    Divergence { value: f64, limit: f64 },

    #[error("grid point {index}: {source}")]
    AtGridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("frequency grid must be non-empty and strictly increasing")]
    BadGrid,

    #[error("reference level mismatch: expected {expected:?}, found {found:?}")]
    ReferenceMismatch { expected: Reference, found: Reference },

    #[error("measured level {measured_db:.3} dB is at or below the electronic floor (-{floor_db:.3} dB)")]
    BelowFloor { measured_db: f64, floor_db: f64 },

    #[error("noise figure is already corrected for electronic noise")]
    AlreadyCorrected,

    #[error("no noise reduction at zero frequency (1 - v = {reduction})")]
    NoSqueezing { reduction: f64 },

    #[error("invalid simulation config: {0}")]
    SimConfig(String),

    #[error("only {got} Welch segments available, at least {need} required")]
    InsufficientSegments { got: usize, need: usize },

    #[error("analytic and estimated frequency grids differ at bin {index}")]
    GridMismatch { index: usize },

    #[error("no fringe found in trace (fitted amplitude {amplitude:e})")]
    NoFringe { amplitude: f64 },

    #[error("trace covers only {periods:.2} fringe periods, at least 3 required")]
    InsufficientPeriods { periods: f64 },

    #[error("fringe fit did not converge after {iterations} iterations (last step {last_step:e}, rms residual {rms:e})")]
    FitNotConverged {
        iterations: usize,
        last_step: f64,
        rms: f64,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error("malformed data file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(index: usize, source: Error) -> Self {
        Error::AtGridPoint {
            index,
            source: Box::new(source),
        }
    }
}
