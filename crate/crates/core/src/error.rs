use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("spin index {index} out of range for {n} spins")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("instance has no nonzero couplings")]
    NoCoupling,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate instance: optimal energy equals the random baseline")]
    DegenerateInstance,

    #[error("instance `{0}` has no known optimum")]
    UnknownOptimum(String),

    #[error("empty sample pool")]
    EmptyPool,

    #[error("resource {requested} exceeds the pool budget {available}")]
    BudgetExceeded { requested: f64, available: f64 },

    #[error("profiles are not aligned on a common resource grid")]
    GridMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("too few instances: need at least {need}, got {got}")]
    TooFewInstances { need: usize, got: usize },

    #[error("unknown solver `{0}` (expected one of: pt, cim-cac)")]
    UnknownSolver(String),

    #[error("integration diverged at step {step}")]
    Diverged { step: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
