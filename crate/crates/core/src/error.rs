use thiserror::Error;

/// Every failure the library can report. Each variant maps to a stable,
/// module-qualified code via [`Error::code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shooting bracket failure: {0}")]
    ShootingBracketFailure(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shift |theta| = {norm} exceeds the admissible radius {limit}")]
    ThetaOutOfRange { norm: f64, limit: f64 },

    #[error("singular exponent gamma = {gamma} must lie in (0, {dim})")]
    GammaOutOfRange { gamma: f64, dim: usize },

    #[error("linear solver did not converge: {0}")]
    SolverNonConvergence(String),

    #[error("operation not available for this coefficient case: {0}")]
    WrongCase(String),

    #[error("degenerate Hessian: {0}")]
    DegenerateHessian(String),

    #[error("Newton iteration diverged: {0}")]
    NewtonDivergence(String),

    #[error("tangent Gram matrix is singular: {0}")]
    BorderSingular(String),

    #[error("extremum reached the boundary of the search ball at theta = {theta:?}")]
    BoundaryExtremum { theta: Vec<f64> },

    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("eigensolver did not converge: {0}")]
    EigensolverNonConvergence(String),

    #[error("degenerate at scale: {0}")]
    DegenerateAtScale(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable identifier of the form `module::Variant`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "problem::InvalidArgument",
            Error::ShootingBracketFailure(_) => "groundstate::ShootingBracketFailure",
            Error::NonConvergence(_) => "groundstate::NonConvergence",
            Error::GridMismatch(_) => "grid::GridMismatch",
            Error::ThetaOutOfRange { .. } => "grid::ThetaOutOfRange",
            Error::GammaOutOfRange { .. } => "grid::GammaOutOfRange",
            Error::SolverNonConvergence(_) => "grid::SolverNonConvergence",
            Error::WrongCase(_) => "functional::WrongCase",
            Error::DegenerateHessian(_) => "functional::DegenerateHessian",
            Error::NewtonDivergence(_) => "reduction::NewtonDivergence",
            Error::BorderSingular(_) => "reduction::BorderSingular",
            Error::BoundaryExtremum { .. } => "reduction::BoundaryExtremum",
            Error::InsufficientPoints { .. } => "reduction::InsufficientPoints",
            Error::EigensolverNonConvergence(_) => "morse::EigensolverNonConvergence",
            Error::DegenerateAtScale(_) => "morse::DegenerateAtScale",
            Error::MissingArtifact(_) => "cli::MissingArtifact",
            Error::Parse(_) => "io::Parse",
            Error::Io(_) => "io::Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
