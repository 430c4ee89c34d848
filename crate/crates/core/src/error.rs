use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("direct DFT oracle limited to {limit} pixels, got {got}")]
    OracleSize { got: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
