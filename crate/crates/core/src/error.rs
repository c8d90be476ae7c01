use thiserror::Error;

/// Errors shared by all solver modules.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("grid misalignment: {0}")]
    Misaligned(String),

    #[error("power iteration did not converge after {iterations} periods (residual {residual:.3e})")]
    NonConverged { iterations: usize, residual: f64 },

    #[error("iterate mass vanished; the spectral problem is degenerate")]
    Degenerate,

    #[error("no sign change in bracket [{lo}, {hi}]; root not found")]
    NoRoot { lo: f64, hi: f64 },

    #[error("searched {0} multiples without hitting the blocked window")]
    WindowSearchExhausted(u64),

    #[error("boundary traces missing for generation {0}")]
    MissingTraces(usize),

    #[error("bad descriptor: {0}")]
    Descriptor(String),
}

pub type Result<T> = std::result::Result<T, Error>;
