use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("expected a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("train-mode batch norm needs at least 2 columns, got {0}")]
    BatchTooSmall(usize),
    #[error("layer index {index} out of range for a network with {len} layers")]
    LayerIndex { index: usize, len: usize },
    #[error("layer {0} has no parameters")]
    ParameterFree(usize),
    #[error("operator is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("coincident inputs in a difference quotient")]
    CoincidentPair,
    #[error("degenerate generator: {0}")]
    DegenerateGenerator(String),
    #[error("dense size cap exceeded: {0} entries")]
    SizeCap(usize),
    #[error("train-mode batch norm breaks the columnwise structure required here")]
    TrainModeBatchNorm,
    #[error("training diverged at step {step}: loss {loss:e}")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("operator does not provide an adjoint")]
    MissingAdjoint,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
