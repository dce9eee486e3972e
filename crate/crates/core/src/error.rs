use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// `mu_star` is not strictly below one of the three admissibility terms.
    #[error("mu_star = {mu_star:e} violates the admissibility bound: must be < {term} = {bound:e}")]
    MuStarBound {
        term: &'static str,
        bound: f64,
        mu_star: f64,
    },

    /// Non-finite state encountered while integrating. Carries the last finite state.
    #[error("numerical divergence at t = {t}")]
    Divergence { t: f64, last_x: DVector<f64> },

    #[error("solver consistency error: {0}")]
    Consistency(String),

    #[error("data error at row {row}: {msg}")]
    Data { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
