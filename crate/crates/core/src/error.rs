use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length error: {0}")]
    Length(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("symmetry violation: {0}")]
    Symmetry(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite loss {loss} at step {step}: {detail}")]
    NonFiniteLoss { step: u64, loss: f64, detail: String },

    #[error(transparent)]
    Autodiff(#[from] dualcodec_autodiff::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
