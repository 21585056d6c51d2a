use thiserror::Error;

/// Errors raised by estimation, variance construction and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("singular design: columns {columns:?} are collinear with earlier columns")]
    SingularDesign { columns: Vec<String> },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("probit separation: {0}")]
    Separation(String),

    #[error("no convergence after {iterations} iterations (final gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("singular Hessian average (condition number {condition:e})")]
    SingularHessian { condition: f64 },

    #[error("singular attribute projection: attribute columns {columns:?} are collinear")]
    SingularAttributes { columns: Vec<String> },

    #[error("{what} is required for the {family} variance family")]
    MetadataRequired { what: &'static str, family: String },

    #[error("enumeration over {requested} binary draws exceeds the cap of {cap}")]
    EnumerationTooLarge { requested: usize, cap: usize },

    #[error("sampling produced an empty sample")]
    EmptySample,

    #[error("study failed: {failed} of {reps} replications failed")]
    StudyFailed { failed: usize, reps: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
