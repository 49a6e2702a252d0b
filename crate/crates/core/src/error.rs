use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "no-wrap rule violated: box length {box_length} < 2*T + w = 2*{horizon} + {support_width}"
    )]
    NoWrap {
        box_length: f64,
        horizon: f64,
        support_width: f64,
    },

    #[error(
        "integrator blow-up at t = {t}: non-finite state (integrator bug for defocusing coupling)"
    )]
    BlowUp { t: f64 },

    #[error("memory guard: {required} bytes requested, budget {budget} bytes")]
    MemoryBudget { required: usize, budget: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown check `{0}`")]
    UnknownCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
