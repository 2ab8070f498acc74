//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use params::{ParamGrads, ParameterSet};
pub use tape::{Axis, Bindings, Gradients, NllOutput, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;
