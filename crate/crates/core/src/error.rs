use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// `C_i` is too ill-conditioned for the regular inversion-lemma route.
    #[error("matrix is singular (condition number {0:.3e})")]
    Singular(f64),
    #[error("rank-deficient channel: {0}")]
    Rank(String),
    /// Numerically degenerate geometry; the allocation under test is rejected.
    #[error("degenerate allocation: {0}")]
    Degenerate(String),
    #[error("no admissible candidate user")]
    SelectionFailed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
