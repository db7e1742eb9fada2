use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vertex {vertex} out of range for graph with {n} vertices")]
    VertexOutOfRange { vertex: usize, n: usize },
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state space of size {size} exceeds cap {cap}")]
    CapExceeded { size: u128, cap: u128 },
    #[error("malformed configuration: {0}")]
    MalformedConfig(String),
    #[error("pinning has empty conditional support")]
    EmptyConditional,
    #[error("inconsistent pinning: {0}")]
    InconsistentPinning(String),
    #[error("not a bipartition: {0}")]
    NotBipartition(String),
    #[error("matrix is not reversible (residual {0:e})")]
    NotReversible(f64),
    #[error("stationary distributions differ (max difference {0:e})")]
    StationaryMismatch(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("system is not monotone under the declared spin order")]
    NotMonotone,
    #[error("ordering violated at step {0}")]
    OrderViolated(usize),
    #[error("eigenvalue has imaginary part {0:e}")]
    ComplexEigenvalue(f64),
    #[error("chain did not reach target within {0} steps")]
    NotConverged(usize),
    #[error("invariant violated: {0}")]
    InvariantViolated(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
