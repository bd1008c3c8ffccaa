use num_complex::Complex64;
use thiserror::Error;

use crate::spectrum::CharacteristicRoot;

/// Errors produced by the analysis routines.
#[derive(Debug, Error, Clone)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("eigensolver failed (residual {residual:e}): {context}")]
    NumericalFailure { context: String, residual: f64 },

    #[error("incomplete spectrum: found {found} roots but the contour encloses {expected}")]
    IncompleteSpectrum {
        roots: Vec<CharacteristicRoot>,
        found: usize,
        expected: usize,
    },

    #[error("contour resolution failure: phase jump {phase_jump:.3} rad near {at}")]
    ContourResolution { at: Complex64, phase_jump: f64 },

    #[error("degenerate delay channel at omega = {omega}")]
    DegenerateDelayChannel { omega: f64 },

    #[error("unsupported parameters: {0}")]
    UnsupportedParameters(String),

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    #[error("classification routes disagree: inequalities give {by_inequalities}, crossings give {by_crossings}")]
    InternalConsistency {
        by_inequalities: String,
        by_crossings: String,
    },

    #[error("switching delays are only defined for classes I and II, got {0}")]
    InapplicableClass(String),

    #[error("parametric curve has no valid samples")]
    EmptyCurve,

    #[error("lambda(mu) has a pole at mu = {mu}")]
    PoleOfLambda { mu: Complex64 },

    #[error("theorem hypothesis violated: {0}")]
    TheoremHypothesis(String),

    #[error("self-intersection {j} not found: {reason}")]
    IntersectionNotFound { j: usize, reason: String },

    #[error("degenerate tangent at self-intersection {j}")]
    DegenerateTangent { j: usize },

    #[error("origin node is unstable (lambda_max = {lambda_max})")]
    NoStableSeed { lambda_max: f64 },

    #[error("decay fit window exhausted: {0}")]
    FitWindowExhausted(String),
}

pub type Result<T> = std::result::Result<T, Error>;
