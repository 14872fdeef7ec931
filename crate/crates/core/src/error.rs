use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// `rel_entropy` called with supp(rho) not contained in supp(sigma).
    #[error("support violation: {0}")]
    Support(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("operator is not unitary (max deviation {0:.3e})")]
    Unitarity(f64),

    #[error("Kraus set violates completeness (max deviation {defect:.3e} > tol {tol:.3e})")]
    CptpViolation { defect: f64, tol: f64 },

    /// A listed outcome has zero forward probability and cannot be reversed.
    #[error("outcome {0} has zero forward probability")]
    DivisionByZeroOutcome(String),

    /// Kraus operators grouped into one class are not mutually proportional.
    #[error("class {label} is not coarse-grainable (proportionality defect {defect:.3e})")]
    NotCoarseGrainable { label: String, defect: f64 },

    #[error("partition does not cover the Kraus labels: {0}")]
    Partition(String),

    /// Outcome probability below the floor that marks forward-impossible paths.
    #[error("impossible outcome (probability {0:.3e})")]
    ImpossibleOutcome(f64),

    #[error("enumeration would produce {paths} paths (limit {limit})")]
    EnumerationTooLarge { paths: u128, limit: u128 },

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("model build failed: {0}")]
    ModelBuild(String),
}

pub type Result<T> = std::result::Result<T, Error>;
