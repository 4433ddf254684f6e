use thiserror::Error;

/// Errors raised by mesh construction, assembly, solvers and time stepping.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate triangle {triangle}: area {area:e}")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("mesh is not conforming: {0}")]
    NonConforming(String),

    #[error("grading did not terminate within {cap} bisection generations")]
    GradingCap { cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "{solver} did not converge after {iterations} iterations (relative residual {residual:e})"
    )]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("dimension {dim} exceeds the dense eigensolver cap {cap}; use max_generalized_eig for the largest eigenvalue")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("instability guard tripped at step {step}: mass norm {norm:e} exceeds {limit:e}")]
    Instability { step: usize, norm: f64, limit: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
