use thiserror::Error;

/// Errors raised by the boundary and interface geometry.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("component {component}: {reason}")]
    InvalidMesh { component: usize, reason: String },
    #[error("degenerate Jacobian at node {node} (|det Jac| = {value:e})")]
    DegenerateJacobian { node: usize, value: f64 },
    #[error("interface map has {got} values, mesh has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("non-finite interface value at node {node}")]
    NonFinite { node: usize },
    #[error("all Jacobians vanish; surface measure undefined")]
    ZeroMeasure,
    #[error("interface is not a valid embedding: {0}")]
    InvalidInterface(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("cross-component coupling must lie in [0, 1], got {0}")]
    Coupling(f64),
    #[error("normalization integral vanished on component {0}")]
    Normalization(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("collar length must be positive, got {0}")]
    CollarLength(f64),
    #[error("collar of length {length} is not injective: {reason}")]
    NotInjective { length: f64, reason: String },
    #[error("cutoff profile rejected: {0}")]
    Cutoff(String),
    #[error("point ({0}, {1}) lies outside the reference domain")]
    OutsideDomain(f64, f64),
    #[error("metric not positive definite (eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("step budget of {budget} exceeded (elapsed {elapsed}, local time {local_time} of {target})")]
    BudgetExceeded {
        budget: u64,
        elapsed: f64,
        local_time: f64,
        target: f64,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("Picard iterate left the validity region at iteration {iteration}, t = {time}")]
    ContractionEscaped { iteration: usize, time: f64 },
    #[error("Picard iteration did not converge in {max_iter} iterations (last increment {last:e})")]
    NoConvergence { max_iter: usize, last: f64 },
    #[error("radial oracle refused: {0}")]
    NotRotationInvariant(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrowthError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("trace sampling failed at jump {jump}: {source}")]
    Trace { jump: u64, source: SdeError },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Sde(#[from] SdeError),
}
