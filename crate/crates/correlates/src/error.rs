use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("sampling positivity violated: stratum `{stratum}` has non-cases but none sampled")]
    SamplingPositivity { stratum: String },

    #[error("degenerate marker: {0}")]
    DegenerateMarker(String),

    #[error("not estimable: {0}")]
    NotEstimable(String),

    #[error("separation: {0}")]
    Separation(String),

    #[error("collinear terms: {}", terms.join(", "))]
    Collinearity { terms: Vec<String> },

    #[error("{family} fit did not converge after {iterations} iterations: {message}")]
    Convergence {
        family: String,
        iterations: usize,
        message: String,
    },

    #[error("no information: {0}")]
    NoInformation(String),

    #[error("prediction error: {0}")]
    Prediction(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("anchoring error: {0}")]
    Anchoring(String),

    #[error("bootstrap failure: {failed} of {total} replicates failed")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("confidence interval error: {0}")]
    Ci(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that arise from a solver or resampling scheme failing
    /// to converge rather than from bad input. Callers that map errors onto
    /// process exit codes use this split.
    pub fn is_convergence_class(&self) -> bool {
        matches!(
            self,
            Error::Separation(_)
                | Error::Collinearity { .. }
                | Error::Convergence { .. }
                | Error::NoInformation(_)
                | Error::BootstrapFailure { .. }
        )
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Data(_) => "data",
            Error::SamplingPositivity { .. } => "sampling_positivity",
            Error::DegenerateMarker(_) => "degenerate_marker",
            Error::NotEstimable(_) => "not_estimable",
            Error::Separation(_) => "separation",
            Error::Collinearity { .. } => "collinearity",
            Error::Convergence { .. } => "convergence",
            Error::NoInformation(_) => "no_information",
            Error::Prediction(_) => "prediction",
            Error::Estimation(_) => "estimation",
            Error::Domain(_) => "domain",
            Error::Anchoring(_) => "anchoring",
            Error::BootstrapFailure { .. } => "bootstrap_failure",
            Error::Ci(_) => "ci",
            Error::Scenario(_) => "scenario",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
