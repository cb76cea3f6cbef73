use thiserror::Error;

/// Errors raised by tensor construction, graph ops and verification helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: index {index} out of range for dimension of size {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("log of non-positive value {value}")]
    NonPositiveLog { value: f64 },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("matrix is near-singular (|det| = {det:e} below floor {floor:e})")]
    SingularMatrix { det: f64, floor: f64 },

    #[error("non-finite value encountered in {what}")]
    NonFinite { what: String },

    #[error("parameter {name:?} already bound to this graph with a different shape")]
    ParamRebound { name: String },

    #[error("loss construction failed: {0}")]
    LossBuilder(String),
}

pub type Result<T> = std::result::Result<T, Error>;
