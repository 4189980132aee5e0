use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unbounded polytope")]
    UnboundedPolytope,
    #[error("empty polytope")]
    EmptyPolytope,
    #[error("degenerate hull: affine dimension {affine_dim} < ambient dimension {dim}")]
    DegenerateHull { affine_dim: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unbounded in the requested direction")]
    UnboundedDirection,
    #[error("indefinite cost (min eigenvalue {min_eig:e})")]
    IndefiniteCost { min_eig: f64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("LMI infeasible (best margin {margin:e})")]
    LmiInfeasible { margin: f64 },
    #[error("ill-conditioned slack matrix (condition {cond:e})")]
    IllConditioned { cond: f64 },
    #[error("no invariant set under these gains/bounds")]
    EmptyInvariantSet,
    #[error("invariant set iteration did not converge in {iterations} iterations")]
    RpiNotConverged {
        iterations: usize,
        last: Box<crate::polytope::HPolytope>,
    },
    #[error("artifact: {0}")]
    Artifact(String),
    #[error("model hash mismatch: artifact {artifact}, model {model}")]
    HashMismatch { artifact: String, model: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
