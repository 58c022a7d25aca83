use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {what}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        what: String,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("gradient check failed for parameter `{param}`: max relative error {max_rel_err:.3e} exceeds {tolerance:.3e}")]
    GradCheckFailed {
        param: String,
        max_rel_err: f64,
        tolerance: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
