use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes and hints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Invalid parameters or settings.
    Config,
    /// The data violates a precondition (missing values, one treatment arm, ...).
    Data,
    /// A fitting routine or resampling loop failed.
    Estimation,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("all columns of the {0} design were dropped as collinear")]
    AllColumnsDropped(&'static str),

    #[error("propensity design is rank deficient")]
    SingularDesign,

    #[error("propensity Hessian is singular at iteration {iteration}")]
    SingularHessian { iteration: usize },

    #[error("propensity fit diverged (|beta| = {norm:.3e}); the treatment is (quasi-)separated by the covariates")]
    Separation { norm: f64 },

    #[error("propensity fit did not converge after {iterations} iterations (scaled gradient {gradient:.3e})")]
    NotConverged { iterations: usize, gradient: f64 },

    #[error("quantile regression at tau = {tau} hit the iteration cap ({iterations})")]
    SolverIterationCap { tau: f64, iterations: usize },

    #[error("quantile regression design is degenerate: {0}")]
    DegenerateDesign(String),

    #[error("invalid tuning parameters: {0}")]
    InvalidTuning(String),

    #[error("derivative step [{tau} - {eta}, {tau} + {eta}] leaves the fitted quantile range [{lo}, {hi}]")]
    StepOutOfRange { tau: f64, eta: f64, lo: f64, hi: f64 },

    #[error("no treated units")]
    NoTreatedUnits,

    #[error("need at least {need} bootstrap draws, got {got}")]
    TooFewDraws { got: usize, need: usize },

    #[error("{attempts} consecutive degenerate bootstrap resamples")]
    DegenerateResamples { attempts: usize },

    #[error("estimated propensity score is numerically 0 or 1 at rows {rows:?}")]
    OverlapFailure { rows: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidTuning(_) | Error::InvalidArgument(_) | Error::UnknownCovariate(_) => {
                ErrorCategory::Config
            }
            Error::InvalidSample(_)
            | Error::InvalidDesign(_)
            | Error::AllColumnsDropped(_)
            | Error::NoTreatedUnits
            | Error::OverlapFailure { .. } => ErrorCategory::Data,
            Error::SingularDesign
            | Error::SingularHessian { .. }
            | Error::Separation { .. }
            | Error::NotConverged { .. }
            | Error::SolverIterationCap { .. }
            | Error::DegenerateDesign(_)
            | Error::StepOutOfRange { .. }
            | Error::TooFewDraws { .. }
            | Error::DegenerateResamples { .. } => ErrorCategory::Estimation,
        }
    }
}
