//! Dense float-64 tensors with a reverse-mode gradient tape.
//!
//! Every forward op records its inputs on the [`Tape`]; [`Tape::backward`]
//! walks the record in reverse and accumulates exact analytic gradients.
//! Broadcasting is limited to adding a row vector to every row of a matrix.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        AutodiffError::Shape { op, detail }
    }
}
