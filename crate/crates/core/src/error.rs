use thiserror::Error;

/// Errors reported by the control, estimation and identification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("riccati iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    RiccatiNotConverged { iterations: usize, last_change: f64 },

    #[error("covariance lost symmetry (asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("augmented model is not detectable")]
    NotDetectable,

    #[error("log too short: {got} samples, need at least {need}")]
    LogTooShort { got: usize, need: usize },

    #[error("regressor matrix is rank deficient on axis {axis} ({equation})")]
    RankDeficient { axis: &'static str, equation: &'static str },

    #[error("point ({0:.4}, {1:.4}) lies outside the input polytope")]
    Infeasible(f64, f64),

    #[error("angles ({0:.4}, {1:.4}) rad are outside the chart domain")]
    OutsideChart(f64, f64),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
