use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    /// Extents disagree with what an operation requires.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A caller-side precondition that is not about shapes.
    #[error("contract violated: {0}")]
    Contract(String),
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Dimension(msg.into()))
}
