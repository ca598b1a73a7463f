use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite sample {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("fields live on different grids or locations")]
    GridMismatch,

    #[error("exponent field violates 1 < p_min <= p <= p_max < inf: {0}")]
    InvalidExponent(String),

    #[error("coefficient field violates 0 < lambda1 <= lambda <= lambda2 < inf: {0}")]
    InvalidCoefficient(String),

    #[error("boundary data must be nonnegative, found {value} at node {index}")]
    NegativeBoundaryData { index: usize, value: f64 },

    #[error("field must vanish on the boundary, found {value} at node {index}")]
    BoundaryNonzero { index: usize, value: f64 },

    #[error("invalid continuation schedule: {0}")]
    InvalidSchedule(String),

    #[error("line search failed in stage {stage} (eps={eps}, delta={delta}) at iteration {iteration}, projected gradient {grad_norm:e}")]
    LineSearch { stage: usize, eps: f64, delta: f64, iteration: usize, grad_norm: f64 },

    #[error("energy became non-finite in stage {stage} at iteration {iteration}")]
    NonFiniteEnergy { stage: usize, iteration: usize },

    #[error("solver did not converge after {iterations} iterations, residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("ball of radius {radius} around ({x}, {y}) is not contained in the domain")]
    Containment { x: f64, y: f64, radius: f64 },

    #[error("no free boundary in the domain")]
    NoFreeBoundary,

    #[error("too few free boundary points: {found} (need {needed})")]
    TooFewPoints { found: usize, needed: usize },

    #[error("cell {cell} has |grad u| = {value} outside the band [{lo}, {hi}]")]
    GradientBand { cell: usize, value: f64, lo: f64, hi: f64 },

    #[error("lemma hypotheses violated: {0}")]
    HypothesisViolated(String),

    #[error("point outside the barrier annulus: |x| = {radius}, annulus [{inner}, {outer}]")]
    OutsideAnnulus { radius: f64, inner: f64, outer: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
