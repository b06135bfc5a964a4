//! Complex tensors, a reverse-mode tape over them, and a finite-difference
//! gradient oracle.

mod check;
mod tape;
mod tensor;

pub use check::{check_gradients, finite_diff, ABS_ERROR_FLOOR};
pub use tape::{logsumexp, sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::{pairwise_sum, ComplexTensor};
