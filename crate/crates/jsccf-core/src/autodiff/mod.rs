//! Minimal deterministic tensor engine with reverse-mode differentiation.
//!
//! The engine records every operation on a [`Graph`] (a linear tape) and
//! replays it in exact reverse order during [`Graph::backward`], so gradient
//! accumulation order is fixed and reruns are bit-identical. Operations are
//! generic over the scalar type: training and inference run at 32-bit,
//! gradient checks at 64-bit.

mod adam;
mod conv;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, sample_off_kink, GradCheckReport, FD_STEP};
pub use graph::{Graph, Var};
pub use tensor::{Scalar, Tensor};

/// Minimum value GDN beta parameters are projected onto; keeps the divisive
/// normalization denominator strictly positive.
pub const GDN_BETA_MIN: f64 = 1e-6;

/// Errors raised by tensor construction, graph recording, and backward passes.
#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{context}: shape mismatch, expected {expected:?} but got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("data of length {len} does not fill shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{context}: unsupported rank for shape {shape:?}")]
    BadRank { context: String, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: invalid parameter: {reason}")]
    InvalidParameter { op: &'static str, reason: String },
    #[error("{op}: degenerate input: {reason}")]
    DegenerateInput { op: &'static str, reason: String },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
}

pub(crate) fn shape_mismatch(
    context: impl Into<String>,
    expected: &[usize],
    got: &[usize],
) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        context: context.into(),
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}
