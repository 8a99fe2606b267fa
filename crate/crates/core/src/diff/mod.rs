//! Reverse-mode differentiation and the handful of neural-network primitives
//! the latent model needs.
//!
//! Everything runs in `f64`. Forward passes are pure functions of
//! (parameters, inputs, caller-supplied noise), which is what makes the
//! finite-difference checks in [`gradcheck`] exact enough to be useful.

mod adam;
pub(crate) mod gemm;
pub mod gradcheck;
mod gru;
pub(crate) mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_diff_check, finite_diff_check_subset, relative_error};
pub use gru::{gru_cell_step, GruParams};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },
}

/// Records `y = W·x + b` on `tape`.
pub fn linear_forward(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
    tape.linear(x, w, b)
}
