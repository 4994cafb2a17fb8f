use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unphysical state: smallest symplectic eigenvalue {0} violates the uncertainty bound")]
    Unphysical(f64),

    #[error("parameter `{name}` = {value} is out of range ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid mode selection: {0}")]
    ModeIndex(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    /// The heralding threshold leaves (numerically) nothing to keep.
    #[error("degenerate selection: success probability {success_probability:e} is below the floor")]
    DegenerateSelection { success_probability: f64 },

    #[error("unsupported input: {0}")]
    Unsupported(String),
}

pub(crate) fn check_range(name: &'static str, value: f64, lo: f64, hi: f64, reason: &'static str) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value, reason })
    }
}
