use std::path::PathBuf;

use crate::conic::SolveStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("neighbor graph: too few co-visible points for point {point}: {reason}")]
    Graph { point: usize, reason: String },

    #[error("intrinsics matrix is singular")]
    SingularIntrinsics,

    #[error("view {view} is unbounded: component {component:?} has no constraining edge")]
    Unbounded { view: usize, component: Vec<usize> },

    #[error("disconnected observation in view {view}: component {component:?} is not linked to the rest")]
    Disconnected { view: usize, component: Vec<usize> },

    #[error("view {view} has no usable edge")]
    NoUsableEdges { view: usize },

    #[error("rigid pair rejected: {0}")]
    RejectedPair(String),

    #[error("image of the absolute conic is not positive definite")]
    NotPositiveDefinite,

    #[error("cost is not finite at focal {focal}")]
    NonFiniteCost { focal: f64 },

    #[error("solver finished with status {status:?}")]
    Solver { status: SolveStatus },

    #[error("point {point} missing from view {view}")]
    Missing { view: usize, point: usize },

    #[error("scene parameter error: {0}")]
    Scene(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable name of the variant, for structured error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidInput(_) => "invalid_input",
            Error::Config(_) => "config",
            Error::Graph { .. } => "graph",
            Error::SingularIntrinsics => "singular_intrinsics",
            Error::Unbounded { .. } => "unbounded",
            Error::Disconnected { .. } => "disconnected",
            Error::NoUsableEdges { .. } => "no_usable_edges",
            Error::RejectedPair(_) => "rejected_pair",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::NonFiniteCost { .. } => "non_finite_cost",
            Error::Solver { .. } => "solver",
            Error::Missing { .. } => "missing",
            Error::Scene(_) => "scene",
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::InvalidInput(_)
            | Error::Graph { .. }
            | Error::Missing { .. }
            | Error::Scene(_)
            | Error::Disconnected { .. }
            | Error::NoUsableEdges { .. } => 3,
            _ => 4,
        }
    }
}
