use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("field is not a probability density: {0}")]
    NotADensity(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("quadrature tail bound unmet at cutoff {cutoff} (tail {tail:.3e})")]
    Quadrature { cutoff: f64, tail: f64 },

    #[error("CFL condition violated: number {number:.3} exceeds 1")]
    Cfl { number: f64 },

    #[error("potential is not 1-Lipschitz: nodes {a} and {b} give ratio {ratio:.6}")]
    NotLipschitz { a: usize, b: usize, ratio: f64 },

    #[error("positivity guard triggered: {0}")]
    Positivity(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("missing data: {0}")]
    Missing(&'static str),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
