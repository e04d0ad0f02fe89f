//! Dense matrices, reverse-mode differentiation, Adam, and a finite-difference
//! gradient oracle.

pub mod adam;
pub mod gradcheck;
mod matrix;
pub mod tape;

pub use adam::{adam_step, AdamParams, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Objective, TapeObjective};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};
