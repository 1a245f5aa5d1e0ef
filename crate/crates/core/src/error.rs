use std::fmt;

/// Pipeline stage in which a failure of [`crate::run_test`] occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Standardize,
    Bandwidth,
    GramPair,
    Statistic,
    NullMatrix,
    Eigenvalues,
    PValue,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Standardize => "standardize",
            Stage::Bandwidth => "bandwidth",
            Stage::GramPair => "gram-pair",
            Stage::Statistic => "statistic",
            Stage::NullMatrix => "null-matrix",
            Stage::Eigenvalues => "eigenvalues",
            Stage::PValue => "p-value",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("angle undefined for (x, y) = (0, 0)")]
    UndefinedAngle,

    #[error("polar Jacobian is singular: S_{index} = {value:e}")]
    SingularJacobian { index: usize, value: f64 },

    #[error("matrix is not positive definite (eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("observation {row} has zero standardized radius")]
    ZeroRadius { row: usize },

    #[error("bandwidth undefined: all points are identical")]
    DegenerateBandwidth,

    #[error("integrand is not finite at {abscissa}")]
    IntegrationFailure { abscissa: f64 },

    #[error("evaluation budget of {budget} exhausted (error estimate {error_estimate:e})")]
    BudgetExceeded { budget: usize, error_estimate: f64 },

    #[error("weight spectrum has no positive entry")]
    DegenerateSpectrum,

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// The innermost error, with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
