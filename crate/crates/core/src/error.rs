use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("expression singular at s = {re} + {im}j")]
    SingularAt { re: f64, im: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("refinement budget of {budget} nodes exceeded")]
    RefinementBudgetExceeded { budget: usize },
    #[error("polygon passes through the origin")]
    OriginOnPolygon,
    #[error("declared pole information inconsistent: {0}")]
    DeclaredInfoInconsistent(String),
    #[error("norm unbounded on the imaginary axis near ω = {omega}")]
    UnboundedOnAxis { omega: f64 },
    #[error("no tail bound available for the H2 integral")]
    TailBoundMissing,
    #[error("frequency equation has no positive root")]
    NoPositiveRoot,
    #[error("A(jω) vanishes at the crossing frequency")]
    AOnAxisZero,
    #[error("zero on or near the contour (margin {margin:e})")]
    ZeroOnContour { margin: f64 },
    #[error("pole-region constraint requires a finite-dimensional loop")]
    NotFiniteDimensional,
    #[error("initial point does not pass the stability gate")]
    InitialPointUnstable,
    #[error("backtracking exhausted at the stability boundary")]
    StalledAtStabilityBoundary,
    #[error("CFL number {0} exceeds 1")]
    CflViolation(f64),
    #[error("controller cannot be realized: {0}")]
    NonRealizableController(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn singular(s: num_complex::Complex64) -> Self {
        Error::SingularAt { re: s.re, im: s.im }
    }
}
