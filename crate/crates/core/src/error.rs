//! Crate-wide error type.

/// Errors produced by geometry, classification, integration and analysis.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("zero vector cannot be projected to the sphere")]
    ZeroVector,

    #[error("angle {0} is outside the open interval (0, pi)")]
    InvalidAngle(f64),

    #[error("point lies on switching circle {circle} (|gamma| = {gamma:.3e})")]
    OnSwitchingManifold { circle: u32, gamma: f64 },

    #[error("bump support intersects switching circle {0}")]
    SupportTouchesSigma(u32),

    #[error("bump support is not contained in region {0}")]
    SupportOutsideRegion(usize),

    #[error("Lie derivative order {0} exceeds the supported maximum 4")]
    OrderTooHigh(u32),

    #[error("point is off circle {circle} (|gamma| = {gamma:.3e})")]
    OffCircle { circle: u32, gamma: f64 },

    #[error("sliding field denominator vanishes at the query point")]
    DegenerateDenominator,

    #[error("a field is tangent along an arc of circle {0}; only isolated tangencies are supported")]
    NonIsolatedTangency(u32),

    #[error("contact order unresolved: Lie derivatives up to order 4 all below threshold")]
    ContactOrderUnresolved,

    #[error("integrator step size underflow at t = {0}")]
    StalledStep(f64),

    #[error("point does not classify as the requested sliding mode")]
    WrongMode,

    #[error("branch policy schedule exhausted before the horizon")]
    PolicyExhausted,

    #[error("orbit prefix does not end at a branch point")]
    NotABranchPoint,

    #[error("probe exceeded the branch prefix limit of {0}")]
    BudgetOverflow(usize),

    #[error("matrix is not skew-symmetric (max |A + A^T| entry = {0:.3e})")]
    NotSkewSymmetric(f64),

    #[error("invalid system definition: {0}")]
    InvalidSystem(String),

    #[error("invalid probe configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
