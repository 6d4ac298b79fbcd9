use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("singular case: {0}")]
    Singular(String),
    #[error("degenerate qudit: {0}")]
    DegenerateQudit(String),
    #[error("unphysical parameters: {0}")]
    Physicality(String),
    #[error("integration failure at t = {time:e} s: {reason}")]
    Integration { time: f64, reason: String },
    #[error("uninvertible point set: {0}")]
    Uninvertible(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid calibration: {0}")]
    Calibration(String),
    #[error("extrapolation refused: {0}")]
    Extrapolation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
