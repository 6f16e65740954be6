use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integration blew up at t = {time}")]
    Integration { time: f64 },
    #[error("periodic orbit not found: residual {residual:e} after {iterations} Newton steps")]
    OrbitNotFound { residual: f64, iterations: usize },
    #[error("numerical quality: {0}")]
    NumericalQuality(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate graph: unstable subspace is vertical (|dx| = {0:e})")]
    DegenerateGraph(f64),
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64, history: Vec<f64> },
    #[error("ergodic constant {c} outside [{lo}, {hi}]")]
    Bracket { c: f64, lo: f64, hi: f64 },
    #[error("anchor compatibility violated between orbits {i} and {j}: {excess:e}")]
    Compatibility { i: usize, j: usize, excess: f64 },
    #[error("{0}")]
    Empty(String),
    #[error("at epsilon = {epsilon}: {source}")]
    AtEpsilon { epsilon: f64, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
