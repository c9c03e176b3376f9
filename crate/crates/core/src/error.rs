use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Target point coincides with a quadrature node or source point.
    #[error("singular evaluation: target coincides with a source point")]
    SingularEvaluation,

    /// A parameter-plane point lies outside the region where the panel
    /// interpolant can be trusted as an analytic continuation.
    #[error("|t| = {0:.3} outside the interpolant trust region |t| <= 3")]
    OutsideTrustRegion(f64),

    /// Newton iteration for the panel preimage did not converge; the caller
    /// should treat the panel as far from the target.
    #[error("preimage not found on panel {panel} (target too far or iteration diverged)")]
    PreimageNotFound { panel: usize },

    /// Evaluation point lies outside the validity disc of an expansion.
    #[error("point outside expansion disc: |z - z0| = {dist:.6e} > r = {radius:.6e}")]
    OutsideDisc { dist: f64, radius: f64 },

    /// Expansion order exceeds the factorial-limited cap.
    #[error("expansion order {order} exceeds cap {cap}")]
    OrderCap { order: usize, cap: usize },

    /// Requested upsampling would exceed the node-count cap.
    #[error("upsampled rule size {requested} exceeds cap {cap}")]
    UpsamplingCap { requested: usize, cap: usize },

    /// The adaptive algorithm cannot reach the requested tolerance within
    /// its caps; carries the best diagnostics achieved before giving up.
    #[error(
        "tolerance {tol:.3e} unreachable (order {order}, kappa {kappa}, last |a_m| = {last_coeff:.3e})"
    )]
    ToleranceUnreachable {
        tol: f64,
        order: usize,
        kappa: usize,
        last_coeff: f64,
    },

    /// Geometry the method does not support (open curves, self-contact, ...).
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    /// Iterative solver failed to converge; carries the residual history.
    #[error("GMRES did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// Invalid experiment or problem configuration.
    #[error("invalid configuration: {0}")]
    Config(String),
}
