//! Dense `f64` tensors with a reverse-mode tape.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Tape`] through [`Var`] handles and differentiated with
//! [`Tape::backward`]. Shapes are never broadcast except by the explicit
//! scalar ops and the convolution bias.

mod gradcheck;
mod kernels;
mod tape;
mod value;

pub use gradcheck::{grad_check, grad_check_coords, GradCheckReport, REL_FLOOR};
pub use tape::{sigmoid, Gradients, Tape, Var, MASK_BIAS};
pub use value::Tensor;
