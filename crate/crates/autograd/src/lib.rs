//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are immutable row-major `f64` buffers. A [`Graph`] records every
//! operation applied to its [`Var`] handles on a linear tape and replays the
//! tape in reverse to accumulate gradients into the leaves. Execution is
//! single-threaded and deterministic: identical inputs produce bit-identical
//! outputs.

mod check;
mod conv;
mod error;
mod graph;
mod tensor;

pub use check::{grad_check, GradCheckOpts, GradCheckReport, WorstOffender};
pub use error::TensorError;
pub use graph::{Graph, Var};
pub use tensor::Tensor;
