//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used by every fallible function in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A density summed to zero, so mass normalization is undefined.
    #[error("total mass is zero, cannot normalize")]
    ZeroMass,

    /// A density contained a negative voxel.
    #[error("negative value {value} at flat index {index}; densities must be non-negative")]
    NegativeValue { index: usize, value: f64 },

    /// Two objects that must share a grid do not.
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    /// An operation that differentiates along an axis got a grid with fewer
    /// than two voxels on that axis.
    #[error("grid {dims} is too small: every axis must have at least 2 voxels for {op}")]
    GridTooSmall { dims: String, op: &'static str },

    /// A density expected to have unit mass does not.
    #[error("density is not mass-normalized (sum = {sum:.9})")]
    NotNormalized { sum: f64 },

    /// The solver requires strictly positive densities.
    #[error("density has a non-positive voxel at flat index {index}; apply mass normalization with a positive floor first")]
    NonPositiveDensity { index: usize },

    /// A file did not parse as the expected format.
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// An array had the wrong shape for its role.
    #[error("{path}: unexpected shape {shape:?}, expected {expected}")]
    Shape {
        path: PathBuf,
        shape: Vec<usize>,
        expected: String,
    },

    /// A manifest is missing a required column.
    #[error("manifest {path}: missing required column '{column}'")]
    MissingColumn { path: PathBuf, column: String },

    /// A manifest parsed but contained no records.
    #[error("manifest {path} contains no records")]
    EmptyManifest { path: PathBuf },

    /// A manifest field failed to parse.
    #[error("manifest {path}, record {record}: {reason}")]
    BadRecord {
        path: PathBuf,
        record: usize,
        reason: String,
    },

    /// An operation over a collection got an empty one.
    #[error("{what} must not be empty")]
    EmptyInput { what: &'static str },

    /// Mismatched vector/matrix dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Data carried no variance where some was required.
    #[error("degenerate data in {context}: {reason}")]
    DegenerateData {
        context: &'static str,
        reason: String,
    },

    /// The regularized within-class scatter was not positive definite.
    #[error("within-class scatter is singular at alpha = {alpha}; increase the regularizer")]
    SingularPencil { alpha: f64 },

    /// CCA's target block had no variance.
    #[error("target variables have zero variance; canonical correlation is undefined")]
    DegenerateTarget,

    /// A class had too few samples for the requested operation.
    #[error("class {class} has {have} samples but {op} needs at least {need}")]
    ClassTooSmall {
        class: f64,
        have: usize,
        need: usize,
        op: &'static str,
    },

    /// A binary-only operation saw a different number of classes.
    #[error("{op} requires exactly 2 classes, found {found}")]
    NotBinary { op: &'static str, found: usize },

    /// A metric that needs both classes present saw only one.
    #[error("labels contain a single class; {op} is undefined")]
    SingleClass { op: &'static str },

    /// A user-supplied parameter was outside its valid range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Underlying I/O failure, annotated with the path when known.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// CSV parsing failure.
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Attach a path to an `std::io::Error`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Build a format error for `path`.
    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Build a grid mismatch error from the two grids' display forms.
    pub fn grid_mismatch(left: impl std::fmt::Display, right: impl std::fmt::Display) -> Self {
        Error::GridMismatch {
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
