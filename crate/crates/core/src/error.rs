use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The correlation boundary |rho| = 1 reached an operation that only
    /// makes sense strictly inside (-1, 1).
    #[error("rho = {rho} is a boundary case; this operation requires |rho| < 1")]
    BoundaryRho { rho: f64 },

    #[error("operation requires the discrete four-point environment family")]
    NonDiscreteFamily,

    #[error("all {replicas} replicas exited before step {depth}")]
    Starvation { replicas: usize, depth: usize },

    #[error("particle weights underflowed at step {step} (ess {ess}, alive {alive})")]
    WeightUnderflow { step: usize, ess: f64, alive: usize },

    #[error("power-law fit needs at least 4 usable points, found {usable}")]
    TooFewPoints { usable: usize },

    #[error(
        "only {accepted} conditioned samples accepted (need {required}); use the h-transform sampler"
    )]
    InsufficientSamples { accepted: usize, required: usize },

    #[error("no co-surviving runs among {trials} (co-existence estimate {coexistence:.3e})")]
    NoCoSurvivors { trials: usize, coexistence: f64 },
}
