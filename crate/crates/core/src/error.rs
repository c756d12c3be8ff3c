use thiserror::Error;

/// Errors raised across model construction, inference and experiment runs.
#[derive(Debug, Error)]
pub enum Error {
    /// A model, query or configuration failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// A probability row does not sum to one.
    #[error("row {row} is not normalised (sum = {sum})")]
    NotNormalized { row: String, sum: f64 },

    /// A structural function was asked for a parent configuration it does not define.
    #[error("no structural row for {variable} under parent configuration {parents}")]
    UnknownParentConfig { variable: String, parents: String },

    /// The observed trajectory has probability zero under the model.
    #[error("evidence has probability zero: {variable} cannot take the observed value")]
    ZeroProbabilityEvidence { variable: String },

    /// Exact enumeration would exceed the configured cell budget.
    #[error("enumeration needs {required} cells, budget is {budget}")]
    CellBudgetExceeded { required: String, budget: u64 },

    /// Policy evaluation did not reach the requested tolerance.
    #[error(
        "policy evaluation did not converge within {iterations} iterations (residual {residual})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    /// Rejection sampling could not find enough goal failures.
    #[error("failure rate too low: {found} failures in {attempts} samples")]
    FailureRateTooLow { found: usize, attempts: usize },

    #[error("asset error: {0}")]
    Asset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
