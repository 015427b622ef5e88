//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive in insertion order, which is already a
//! topological order, so the backward pass is a single reverse sweep. Tapes
//! are rebuilt for every training step and never shared between threads.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, FD_STEP};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tape::sigmoid;
