//! Dense tensors and reverse-mode automatic differentiation.

pub mod gradcheck;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_many, finite_difference_check, CheckOptions, CheckReport};
pub use scalar::Scalar;
pub use tape::{gelu_scalar, Gradients, RowDivisor, Tape, Trace, Var, SIGMA_CLAMP};
pub use tensor::Tensor;
