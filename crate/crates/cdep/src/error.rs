use std::path::PathBuf;

use cdep_core::{Error as CoreError, ErrorCategory};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{module}: {source}\n  hint: {hint}")]
    Core {
        module: &'static str,
        hint: &'static str,
        #[source]
        source: CoreError,
    },

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    /// 2 configuration, 3 data, 4 estimation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) | AppError::Io { .. } => 3,
            AppError::Core { source, .. } => match source.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Estimation => 4,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }
}

impl From<CoreError> for AppError {
    fn from(source: CoreError) -> Self {
        let (module, hint) = describe(&source);
        AppError::Core { module, hint, source }
    }
}

/// Module of origin and a remedial hint for a library error.
fn describe(err: &CoreError) -> (&'static str, &'static str) {
    use CoreError::*;
    match err {
        InvalidSample(_) => ("dataset", "check for missing values and that both treatment arms are present"),
        UnknownCovariate(_) => ("dataset", "design terms must name columns listed in --covariates"),
        InvalidDesign(_) | AllColumnsDropped(_) => ("dataset", "revise the q/r design formulas"),
        SingularDesign | SingularHessian { .. } => {
            ("first_stage", "the propensity design is (nearly) collinear; remove redundant terms")
        }
        Separation { .. } => (
            "first_stage",
            "some covariate combination predicts treatment perfectly; coarsen or drop it, or trim the sample",
        ),
        NotConverged { .. } => ("first_stage", "rescale covariates or simplify the propensity design"),
        SolverIterationCap { .. } | DegenerateDesign(_) => {
            ("first_stage", "the quantile-regression design is degenerate; simplify q(x, w)")
        }
        InvalidTuning(_) | StepOutOfRange { .. } => ("first_stage", "adjust epsilon, tau step or the eta/kappa scales"),
        NoTreatedUnits => ("bound_engine", "the ATT needs treated units"),
        TooFewDraws { .. } => ("inference", "increase --draws"),
        DegenerateResamples { .. } => {
            ("inference", "resamples keep losing a treatment arm or full rank; the sample is too small for the design")
        }
        OverlapFailure { .. } => ("diagnostics", "fitted propensities hit 0 or 1; trim the sample or simplify the design"),
        InvalidArgument(_) => ("cli", "check the command-line arguments"),
    }
}
