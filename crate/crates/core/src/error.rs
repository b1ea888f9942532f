use thiserror::Error;

/// Everything that can go wrong inside the library.
///
/// Variants carry enough context to be reported verbatim by the CLI; the
/// numeric [`Error::code`] is what the C ABI hands across the boundary.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("domain is not convex at theta = {theta}: h'' + h = {radius}")]
    NonConvexDomain { theta: f64, radius: f64 },
    #[error("point is not on the domain boundary (residual {residual:.3e})")]
    PointNotOnBoundary { residual: f64 },
    #[error("invalid support arc: {0}")]
    InvalidArc(String),
    #[error("convexity lost at node {index} (sigma_thth + sigma = {radius:.3e})")]
    ConvexityLost { index: usize, radius: f64 },
    #[error("arc endpoints are off the barrier (contact residual {residual:.3e})")]
    ContactMismatch { residual: f64 },
    #[error("step rejected: {0}")]
    StepRejected(String),
    #[error("contact solve failed: {0}")]
    ContactSolveFailed(String),
    #[error("solver failed at t = {t:.6e} after {steps} steps: {source}")]
    Run {
        t: f64,
        steps: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("inconsistent extinction fit: fixed point {fixed_point:.12e} vs least squares {least_squares:.12e}")]
    InconsistentFit { fixed_point: f64, least_squares: f64 },
    #[error("degenerate denominator in scaling solve ({0:.3e})")]
    DegenerateDenominator(f64),
    #[error("no real root for the translation equation")]
    NoRealRoot,
    #[error("ambiguous translation roots {0:.6e} and {1:.6e}")]
    AmbiguousRoot(f64, f64),
    #[error("checkpoint {index}: {source}")]
    AtCheckpoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("arc must satisfy 0 < theta_lo < theta_hi < pi (got [{0}, {1}])")]
    DomainNotInterior(f64, f64),
    #[error("quadrature and spectral quadratic forms disagree: {quadrature:.6e} vs {spectral:.6e}")]
    SpectralMismatch { quadrature: f64, spectral: f64 },
    #[error("non-positive value {value:.3e} at t~ = {at:.4} in rate fit")]
    NonPositiveData { at: f64, value: f64 },
    #[error("polyline spacing collapsed (min/mean = {0:.3e})")]
    SpacingCollapse(f64),
    #[error("no overlapping sample times between trajectories")]
    NoOverlap,
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable integer code used by the C ABI. Zero is reserved for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidDomain(_) => 10,
            Error::NonConvexDomain { .. } => 11,
            Error::PointNotOnBoundary { .. } => 12,
            Error::InvalidArc(_) => 13,
            Error::ConvexityLost { .. } => 20,
            Error::ContactMismatch { .. } => 21,
            Error::StepRejected(_) => 22,
            Error::ContactSolveFailed(_) => 23,
            Error::Run { source, .. } => source.code(),
            Error::InsufficientData(_) => 30,
            Error::InconsistentFit { .. } => 31,
            Error::DegenerateDenominator(_) => 40,
            Error::NoRealRoot => 41,
            Error::AmbiguousRoot(..) => 42,
            Error::AtCheckpoint { source, .. } => source.code(),
            Error::DomainNotInterior(..) => 50,
            Error::SpectralMismatch { .. } => 51,
            Error::NonPositiveData { .. } => 52,
            Error::SpacingCollapse(_) => 60,
            Error::NoOverlap => 61,
            Error::Config { .. } => 70,
            Error::Parse { .. } => 71,
            Error::Io(_) => 80,
        }
    }

    pub(crate) fn at_checkpoint(self, index: usize) -> Error {
        Error::AtCheckpoint {
            index,
            source: Box::new(self),
        }
    }
}
