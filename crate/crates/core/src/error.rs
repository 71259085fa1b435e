use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrix is numerically singular (smallest eigenvalue modulus {min_modulus:e})")]
    SingularMatrix { min_modulus: f64 },

    #[error("matrix is not expansive: {0}")]
    NotExpansive(String),

    #[error("matrix has eigenvalues off the positive real axis")]
    NonPositiveSpectrum,

    #[error("matrix is not unipotent: |(U - I)^d| = {residual:e}")]
    NotUnipotent { residual: f64 },

    #[error("Jordan basis condition number {cond:e} exceeds cap {cap:e}")]
    IllConditionedBasis { cond: f64, cap: f64 },

    #[error("Jordan structure could not be resolved: {0}")]
    JordanStructure(String),

    #[error("zero vector")]
    ZeroVector,

    #[error("ellipsoid nesting certification failed: worst ratio {worst:e}")]
    CertificationFailed { worst: f64 },

    #[error("covering kinds differ")]
    KindMismatch,
}

impl Error {
    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditionedBasis { .. }
                | Error::JordanStructure(_)
                | Error::CertificationFailed { .. }
                | Error::NotUnipotent { .. }
        )
    }
}
