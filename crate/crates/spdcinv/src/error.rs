//! Error taxonomy for the simulation and design pipeline.
//!
//! Variants are grouped by failure class rather than by module so the CLI
//! can map them onto stable exit codes: configuration problems, numerical
//! breakdowns during a run, and validation/acceptance failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpdcError {
    /// Invalid or inconsistent run configuration. `field` is the JSON-ish
    /// path of the offending entry, e.g. `pump.coefficients`.
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Shape mismatch between fields, grids or coefficient vectors.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// Grid too coarse for a requested mode.
    #[error(
        "grid resolution too coarse for mode {mode}: waist {waist_m:.3e} m \
         spans {points_per_waist:.1} points, need >= {required:.0}"
    )]
    Resolution {
        mode: String,
        waist_m: f64,
        points_per_waist: f64,
        required: f64,
    },

    /// Non-finite field values produced during propagation.
    #[error("numerical failure at split step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    /// An estimator could not be normalized (e.g. all-zero coincidences).
    #[error("normalization failure in {context}: {reason}")]
    Normalization { context: String, reason: String },

    /// Requested feature outside the supported envelope.
    #[error("unsupported: {reason}")]
    Feature { reason: String },

    /// Tomography plan does not cover the generator tuples needed by the
    /// reconstruction.
    #[error("measurement coverage incomplete: missing {missing} projector pairs, first: {first}")]
    Coverage { missing: usize, first: String },

    /// Gradient produced a non-finite entry.
    #[error("non-finite gradient for parameter index {index} ({name})")]
    Gradient { index: usize, name: String },

    /// Training diverged (loss exploded past the abort threshold).
    #[error(
        "training diverged at epoch {epoch}: loss {loss:.3e} exceeds \
         {factor:.0}x initial loss {initial:.3e}"
    )]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
        factor: f64,
    },

    /// Validation / acceptance check failed.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

impl SpdcError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SpdcError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(
        context: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        SpdcError::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SpdcError::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code class for the CLI: 2 config, 3 numerical, 4 validation,
    /// 5 i/o. Kept here so the mapping lives next to the variants.
    pub fn exit_code(&self) -> i32 {
        match self {
            SpdcError::Config { .. }
            | SpdcError::Shape { .. }
            | SpdcError::Resolution { .. }
            | SpdcError::Feature { .. }
            | SpdcError::Parse { .. } => 2,
            SpdcError::Numerical { .. }
            | SpdcError::Normalization { .. }
            | SpdcError::Gradient { .. }
            | SpdcError::Diverged { .. }
            | SpdcError::Coverage { .. } => 3,
            SpdcError::Validation(_) => 4,
            SpdcError::Io { .. } => 5,
        }
    }
}
