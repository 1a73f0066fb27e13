//! Error types shared across the crate.

use thiserror::Error;

/// Errors from wavelet filter and stencil construction.
#[derive(Debug, Clone, Error)]
pub enum WaveletError {
    /// Requested filter order is outside the supported range 1..=10.
    #[error("unsupported wavelet order {order}: supported range is 1..=10")]
    UnsupportedOrder { order: usize },
    /// The (order, derivative) pair fails the regularity gate
    /// `2*order - derivative_order >= 2`, or the stencil linear system
    /// is degenerate for this pair.
    #[error(
        "insufficient regularity: order {order} cannot represent derivative \
         of order {derivative_order} (need 2*order - n >= 2)"
    )]
    InsufficientRegularity { order: usize, derivative_order: usize },
    /// The internal linear solve for filter or stencil coefficients failed.
    #[error("wavelet linear system did not converge: {context}")]
    SolveFailed { context: String },
}

/// Shape and level bookkeeping errors in the multiresolution transform.
#[derive(Debug, Clone, Error)]
pub enum MraError {
    #[error("signal length {len} is not a power of two")]
    NonPowerOfTwoLength { len: usize },
    #[error("coarsest level {coarsest} exceeds finest level {finest}")]
    BadLevelRange { coarsest: usize, finest: usize },
    #[error("level {level} outside stored range {coarsest}..={finest}")]
    LevelOutOfRange { level: usize, coarsest: usize, finest: usize },
    #[error("coefficient block at level {level} has length {got}, expected {expected}")]
    InconsistentLevelLength { level: usize, got: usize, expected: usize },
    #[error("operator levels {op_coarsest}..{op_finest} do not match coefficients {coarsest}..{finest}")]
    LevelMismatch {
        op_coarsest: usize,
        op_finest: usize,
        coarsest: usize,
        finest: usize,
    },
}

/// Errors from phase-space state construction and diagnostics.
#[derive(Debug, Clone, Error)]
pub enum PhaseSpaceError {
    #[error("grid dimension {name}={n} is not a power of two")]
    NonPowerOfTwoGrid { name: &'static str, n: usize },
    #[error("invalid grid extent: {context}")]
    BadExtent { context: String },
    #[error("hbar must be positive, got {hbar}")]
    NonPositiveHbar { hbar: f64 },
    #[error(
        "domain coverage violated: boundary mass {mass:.3e} exceeds guard {guard:.3e} at t={time}"
    )]
    DomainCoverage { mass: f64, guard: f64, time: f64 },
    #[error("phase-space grids do not match: {context}")]
    GridMismatch { context: String },
    #[error("wavefunction grid has {got} samples, phase-space grid expects {expected}")]
    WavefunctionMismatch { got: usize, expected: usize },
    #[error("moment order {order} exceeds supported maximum 4")]
    MomentOrderTooLarge { order: usize },
}

/// Errors from the ensemble layer.
#[derive(Debug, Clone, Error)]
pub enum EnsembleError {
    #[error("mixture weights must satisfy \u{3a3} w_i = 1, got {sum}")]
    WeightSum { sum: f64 },
    #[error("mixture weight {weight} is negative")]
    NegativeWeight { weight: f64 },
    #[error("ensemble is empty")]
    Empty,
    #[error("ensemble members use different grids")]
    GridMismatch,
}

/// Errors raised during time integration.
#[derive(Debug, Clone, Error)]
pub enum SolverError {
    #[error("time step must be positive, got {dt}")]
    NonPositiveStep { dt: f64 },
    #[error(
        "instability detected at t={time}: max|W| grew from {before:.3e} to {after:.3e} in one step"
    )]
    Instability { time: f64, before: f64, after: f64 },
    #[error(transparent)]
    PhaseSpace(#[from] PhaseSpaceError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Mra(#[from] MraError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    /// The level sweep exhausted `max_levels` without meeting the cutoff.
    #[error(
        "level cutoff not reached: finest difference {achieved:.3e} still above epsilon {epsilon:.3e} \
         (differences: {differences:?})"
    )]
    CutoffNotReached {
        achieved: f64,
        epsilon: f64,
        /// (coarser level, ||W at level+1 - W at level||) pairs, in sweep order.
        differences: Vec<(usize, f64)>,
    },
    #[error("moment oracle supports quadratic potentials only, got degree {degree}")]
    UnsupportedOracle { degree: usize },
}

impl SolverError {
    /// True for failures of the run itself rather than of its inputs.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            SolverError::Instability { .. }
                | SolverError::CutoffNotReached { .. }
                | SolverError::PhaseSpace(PhaseSpaceError::DomainCoverage { .. })
        )
    }
}
