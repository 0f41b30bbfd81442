//! Reverse-mode differentiation over the kernel set, plus a
//! finite-difference oracle for verifying it.

mod check;
mod exec;
mod op;
mod suite;
mod tape;

pub use check::{finite_diff_grad, gradcheck, rel_err, GradcheckConfig, GradcheckReport, ParamCheck, DEFAULT_EPS};
pub use exec::{Eager, Exec};
pub use op::{bce_logit, Op, Saved};
pub use suite::{op_suite, op_suite_labels};
pub use tape::{forward_traced, GradMap, Tape, Var};
