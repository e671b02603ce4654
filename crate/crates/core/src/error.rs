use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("eigenvalues must be positive and nondecreasing: index {index} has {value} after {previous}")]
    NotMonotone { index: usize, previous: f64, value: f64 },

    #[error("eigenvalue {index} = {value} is below the growth bound c1*k^p = {bound}")]
    GrowthViolation { index: usize, value: f64, bound: f64 },

    #[error("dimension mismatch: {what} has dimension {got}, at most {limit} allowed")]
    DimensionMismatch { what: &'static str, got: usize, limit: usize },

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e}")]
    Indefinite { eigenvalue: f64 },

    #[error("ellipticity violated: {quantity} = {value} outside [{lower}, {upper}] at witness {witness:?}")]
    Ellipticity {
        quantity: String,
        value: f64,
        lower: f64,
        upper: f64,
        witness: Vec<f64>,
    },

    #[error("covariance is too ill-conditioned for derivative weights at t = {t:e} (smallest eigenvalue {min_eigenvalue:e})")]
    SingularCovariance { t: f64, min_eigenvalue: f64 },

    #[error("path {path} became non-finite at step {step}")]
    BlowUp { path: usize, step: usize },

    #[error("euler-maruyama step is unstable: dt*max(lambda/gamma) = {value} >= 0.5")]
    UnstableStep { value: f64 },

    #[error("horizon {actual} is too short for lambda = {lambda}: need T >= {required}")]
    HorizonTooShort { lambda: f64, actual: f64, required: f64 },

    #[error("sum of lambda_k^(-{exponent}) diverges for growth exponent p = {p}")]
    DivergentTail { exponent: f64, p: f64 },

    #[error("tail of the coefficient-difference sum ({tail:e}) exceeds tolerance {tolerance:e}")]
    TruncationTail { tail: f64, tolerance: f64 },

    #[error("budget exhausted at depth {depth}: achieved standard error {std_error:e}, required {required:e}")]
    BudgetExhausted { depth: usize, std_error: f64, required: f64 },

    #[error("unknown test function kind `{0}` (expected constant, sine, product-sine, gaussian-bump or compact-bump)")]
    UnknownKind(String),

    #[error("point is not in Q(beta, N): coordinate {index} has |x|*lambda^(beta/2) = {value} > {n_bound}")]
    OutsideRegion { index: usize, value: f64, n_bound: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
