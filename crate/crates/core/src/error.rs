use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{what} index {index} out of range (valid: {valid})")]
    Index {
        what: &'static str,
        index: usize,
        valid: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    Asymmetric { row: usize, col: usize, gap: f64 },

    #[error("need at least 2 observations for an unbiased covariance, got {0}")]
    InsufficientSamples(usize),

    #[error("all eigenvalues are zero; contribution ratios are undefined")]
    DegenerateSpectrum,

    #[error("training labels contain a single class; both -1 and +1 are required")]
    DegenerateLabels,

    #[error("{solver} did not converge after {iterations} iterations")]
    Convergence {
        solver: &'static str,
        iterations: usize,
    },

    #[error("operation requires an RBF kernel")]
    UnsupportedKernel,

    #[error("forward trace holds {recorded} layers, layer {requested} was requested")]
    TraceDepth { requested: usize, recorded: usize },

    #[error("PCA layer {layer} must satisfy 1 <= l < L = {depth}")]
    LayerPosition { layer: usize, depth: usize },

    #[error("missing {0} Jacobians in bundle")]
    MissingJacobians(&'static str),

    #[error("non-finite value at output {output}, input {input}")]
    NonFinite { output: usize, input: usize },

    #[error("unsupported request: {0}")]
    Unsupported(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("unknown bundle version {0:?}")]
    UnknownVersion(String),

    #[error("refusing to overwrite {0} (pass --force)")]
    RefuseOverwrite(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Index { .. }
                | Error::Validation(_)
                | Error::Asymmetric { .. }
                | Error::TraceDepth { .. }
                | Error::LayerPosition { .. }
                | Error::MissingJacobians(_)
                | Error::Unsupported(_)
                | Error::Integrity(_)
                | Error::UnknownVersion(_)
                | Error::RefuseOverwrite(_)
                | Error::Io { .. }
                | Error::Manifest { .. }
        )
    }
}
