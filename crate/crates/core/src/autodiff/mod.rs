//! Reverse-mode automatic differentiation over dense arrays.

mod array;
mod gradcheck;
mod graph;
pub mod kernels;

pub use array::{log_softmax, Array};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckOptions, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Graph, Var};
