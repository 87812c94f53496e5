//! Minimal reverse-mode automatic differentiation, constrained parameters,
//! Adam, and a finite-difference gradient verifier.

mod adam;
mod check;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use check::{finite_diff_check, FdReport};
pub use params::{grad, BoundParams, Constraint, Param, ParamStore};
pub use tape::{log_sum_exp, Gradients, Sources, Tape, Var};
pub use tensor::Tensor;
