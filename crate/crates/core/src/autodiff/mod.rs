//! Reverse-mode automatic differentiation.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, max_error, ParamVars};
pub use tape::{Tape, Var};
