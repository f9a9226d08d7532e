//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("external mode index {index} out of range (n_external = {n_external})")]
    ModeIndex { index: usize, n_external: usize },
    #[error("mode spaces do not match: {0} vs {1}")]
    ModeSpaceMismatch(String, String),
    #[error("internal state is not normalized: |norm - 1| = {deviation:.3e}")]
    NotNormalized { deviation: f64 },
    #[error("transmissivity {0} outside [0, 1]")]
    InvalidTransmissivity(f64),
    #[error("beam splitter requires two distinct modes, got {0} twice")]
    DegenerateGate(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("particle number must be even and >= 4, got {0}")]
    OddParticleCount(usize),
    #[error("loss vector length {got} does not match {expected} lossy ports")]
    LossLength { got: usize, expected: usize },
    #[error("loss dilation must be applied before the multiplex layer")]
    LossAfterMultiplex,
    #[error("spec already dilated with loss")]
    LossAlreadyPresent,
    #[error("multiplex layer already present")]
    MultiplexAlreadyPresent,
    #[error("invalid squeezing parameter gamma = {0}; need 0 <= gamma < 1")]
    InvalidSqueezing(f64),
    #[error("emission term needs at least one pair")]
    EmptyEmission,
    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),
    #[error("operator mode tuples must have length 2 or 4, got {0}")]
    BadOperatorArity(usize),
    #[error("repeated output mode {0} in correlator")]
    RepeatedMode(usize),
    #[error("unknown channel name {0:?}")]
    UnknownChannel(String),
    #[error("phase grids do not match")]
    GridMismatch,
    #[error("scan grid must be non-empty and strictly increasing")]
    BadGrid,
    #[error("cosine fit needs >= 3 points spanning more than pi")]
    InsufficientFitData,
    #[error("degenerate design matrix in least-squares fit")]
    DegenerateFit,
    #[error("objective evaluated to a non-finite value at {0:?}")]
    NonFiniteObjective(Vec<f64>),
    #[error("infeasible bounds: lower {lo} > upper {hi}")]
    InfeasibleBounds { lo: f64, hi: f64 },
    #[error("particle number {requested} exceeds compute budget {budget}")]
    BudgetExceeded { requested: usize, budget: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
