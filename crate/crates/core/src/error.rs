//! Error types shared across the library.

use thiserror::Error;

/// Unified error type for all library operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Too few points for the requested operation.
    #[error("insufficient points: need {needed}, have {got}")]
    InsufficientPoints { needed: usize, got: usize },

    /// Too few views for the requested operation.
    #[error("insufficient views: need {needed}, have {got}")]
    InsufficientViews { needed: usize, got: usize },

    /// A stacked linear system is rank-deficient beyond use
    /// (second singular value below tolerance relative to the first).
    #[error("rank-deficient system: sigma2/sigma1 = {ratio:.3e}")]
    RankDeficientSystem { ratio: f64 },

    /// All minors of a coefficient computation vanished.
    #[error("degenerate minors: all coefficients below noise floor")]
    DegenerateMinors,

    /// A point set has no spread, so alignment is underdetermined.
    #[error("degenerate point set: zero spread")]
    DegenerateSet,

    /// Every view pair was unusable (fewer than 9 co-observed points).
    #[error("no usable view pairs")]
    NoUsablePairs,

    /// Matrix dimensions do not admit the requested operation.
    #[error("shape error: {0}")]
    ShapeError(String),

    /// Two grids have different dimensions.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An indexed grid entry is not observed.
    #[error("missing observation at view {view}, point {point}")]
    MissingObservation { view: usize, point: usize },

    /// Projection or dehomogenization hit a point at infinity.
    #[error("point at infinity")]
    PointAtInfinity,

    /// Camera center at infinity (degenerate projection matrix).
    #[error("camera center at infinity")]
    CenterAtInfinity,

    /// DLT null space is ambiguous (e.g. coplanar points).
    #[error("degenerate configuration: null space ambiguous")]
    DegenerateConfiguration,

    /// A projective transform is not invertible.
    #[error("singular transform")]
    SingularTransform,

    /// Scene generation could not place all points in all views.
    #[error("scene generation failed after {attempts} attempts")]
    GenerationFailure { attempts: usize },

    /// File parsing failed.
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    /// I/O failure wrapped with context.
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
