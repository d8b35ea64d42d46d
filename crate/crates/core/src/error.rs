use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pitch left the admissible domain: vehicle {vehicle}, theta = {theta:.6} rad at t = {t:.3} s (step {step})")]
    PitchDomain {
        vehicle: usize,
        theta: f64,
        t: f64,
        step: usize,
    },
    #[error("path is not regular at xi = {0}")]
    IrregularPath(f64),
    #[error("non-finite state at t = {t:.3} s (step {step})")]
    NonFinite { t: f64, step: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("log format: {0}")]
    LogFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
