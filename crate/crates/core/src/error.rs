use alloc::string::String;

/// Errors raised by field calculus, constitutive evaluation and the integrators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch in {0}")]
    GridMismatch(&'static str),

    #[error("expected {expected} values, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },

    #[error("density {value} at node {node} is outside the domain of {what}")]
    Domain {
        what: &'static str,
        node: usize,
        value: f64,
    },

    #[error("vacuum: min density {min_rho:e} at node {node} below floor {floor:e} (t = {time})")]
    Vacuum {
        min_rho: f64,
        node: usize,
        floor: f64,
        time: f64,
    },

    #[error("momentum {momentum:e} at node {node} where density is below the vacuum floor")]
    KineticUndefined { node: usize, momentum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("time grids do not match: {0}")]
    TimeGridMismatch(String),

    #[error("stiffness: dt = {dt:e} exceeds eps^2/2 = {limit:e} with explicit friction")]
    Stiffness { dt: f64, limit: f64 },

    #[error("instability at t = {time}: {reason}")]
    Instability { time: f64, reason: String },

    #[error("insufficient time coverage: {0}")]
    Coverage(String),

    #[error("degenerate fit input: {0}")]
    DegenerateFit(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
