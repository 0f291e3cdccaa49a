use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape disagreement; the message names the offending node or value.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A named input or parameter required by a graph was not supplied.
    #[error("missing tensor '{0}'")]
    MissingTensor(String),

    /// Graph construction or evaluation error.
    #[error("graph error: {0}")]
    Graph(String),

    /// Signal-processing precondition violated (band edges, window bounds, ...).
    #[error("signal error: {0}")]
    Signal(String),

    /// Corpus or embedding-table failure.
    #[error("corpus error: {0}")]
    Corpus(String),

    /// Model assembly or checkpoint failure.
    #[error("model error: {0}")]
    Model(String),

    /// Unknown subject id passed to the subject layer.
    #[error("unknown subject id '{0}'")]
    UnknownSubject(String),

    /// Training failure (NaN gradients, empty splits, ...).
    #[error("train error: {0}")]
    Train(String),

    /// Sentence text assigned to more than one split.
    #[error("split leakage: {0}")]
    Leakage(String),

    /// Evaluation failure (no scorable records, zero-norm prediction, ...).
    #[error("eval error: {0}")]
    Eval(String),

    /// Configuration file or override problem.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
