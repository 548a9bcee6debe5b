//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by rigid-motion and homography construction.
#[derive(Debug, Error)]
pub enum GeometryError {
    /// The rotation angle is too close to a half turn for the logarithm to
    /// pick a branch reliably.
    #[error("rotation angle {angle} rad is too close to pi for a stable logarithm")]
    AngleTooLarge { angle: f64 },

    /// The supplied 3x3 block is not orthonormal with determinant +1.
    #[error("matrix is not a rotation (orthonormality defect {defect:.3e})")]
    NotARotation { defect: f64 },

    /// The plane-induced projection matrix is numerically singular.
    #[error("plane projection is singular (condition number {cond:.3e})")]
    SingularProjection { cond: f64 },

    /// The blur homography collapsed to a non-invertible map.
    #[error("degenerate homography (|det| = {det:.3e})")]
    DegenerateHomography { det: f64 },
}

/// Errors raised while assembling or applying blur operators.
#[derive(Debug, Error)]
pub enum BlurError {
    /// A segmentation label has no matching plane patch.
    #[error("segmentation label {label} has no plane patch")]
    MissingSegment { label: u16 },

    /// Image or operator dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Errors raised by dataset ingestion and file formats.
#[derive(Debug, Error)]
pub enum IoError {
    /// A file failed to parse; names the file and the offending field.
    #[error("parse error in {file} ({field}): {message}")]
    Parse {
        file: String,
        field: String,
        message: String,
    },

    /// A loaded value violates a documented invariant.
    #[error("invariant violation in {file}: {check}")]
    InvariantViolation { file: String, check: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Geometry(#[from] GeometryError),

    #[error(transparent)]
    Blur(#[from] BlurError),
}
