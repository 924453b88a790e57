use thiserror::Error;

/// Failures raised by the tensor kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },
    #[error("{op}: degenerate (zero-norm) vector")]
    Degenerate { op: &'static str },
    #[error("contract violated: {0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn shapes(op: &'static str, a: &[usize], b: &[usize]) -> Self {
        TensorError::Shape {
            op,
            detail: format!("{a:?} vs {b:?}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("text of {got} tokens exceeds the encoder limit of {max}")]
    TextTooLong { got: usize, max: usize },
    #[error("response schema error: {reason}; raw payload: {raw}")]
    Schema { reason: String, raw: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("non-finite loss at step {step} (sample {sample_id})")]
    NonFiniteLoss { step: u64, sample_id: String },
    #[error("contract violated: {0}")]
    Contract(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
