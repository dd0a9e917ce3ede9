use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A trailing column vanished during Householder elimination.
    #[error("degenerate pivot in column {column}: remaining norm {norm:e}")]
    DegeneratePivot { column: usize, norm: f64 },

    #[error("shift z = {z} is singular for the matrix (pivot {pivot:e} at step {step})")]
    SingularShift { z: Complex64, step: usize, pivot: f64 },

    #[error("{routine} did not converge after {iterations} iterations")]
    ConvergenceFailure { routine: &'static str, iterations: usize },

    #[error("evaluation point {lambda} coincides with filter node {node}")]
    PoleHit { lambda: Complex64, node: Complex64 },

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("filter does not separate target from unwanted eigenvalues (rho = {rho:e})")]
    SeparationFailure { rho: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("requested eigenvector condition number {0:e} exceeds the supported limit 1e8")]
    KappaRefused(f64),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("eta = {eta:e} is outside the domain [0, {bound:e})")]
    DomainViolation { eta: f64, bound: f64 },

    #[error("envelope bound is vacuous (rho_tilde = {rho_tilde:e} >= 1)")]
    VacuousBound { rho_tilde: f64 },

    #[error("missing diagnostics: {0}")]
    MissingDiagnostics(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error after peeling context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures raised by the numerical kernels themselves.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::DegeneratePivot { .. }
                | Error::SingularShift { .. }
                | Error::ConvergenceFailure { .. }
                | Error::PoleHit { .. }
                | Error::SeparationFailure { .. }
                | Error::RankDeficient(_)
                | Error::DomainViolation { .. }
                | Error::VacuousBound { .. }
                | Error::NonFinite(_)
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_)
                | Error::Precondition(_)
                | Error::InvalidFilter(_)
                | Error::InvalidSpectrum(_)
                | Error::KappaRefused(_)
                | Error::Json(_)
        )
    }
}
