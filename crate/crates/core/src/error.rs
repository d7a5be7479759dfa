use alloc::string::String;

/// Errors raised by the algorithms in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Inputs violate a precondition (shapes, distributions, ranges, ...).
    #[error("validation error: {0}")]
    Validation(String),
    /// A loss became NaN or infinite during training.
    #[error("training diverged during {stage} at index {index}: non-finite loss")]
    NonFiniteLoss { stage: &'static str, index: usize },
    /// An optimizer step saw a NaN or infinite gradient.
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for failures that happen while fitting a model.
    pub fn is_training(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_))
    }
}

pub type Result<T> = core::result::Result<T, Error>;
