//! Dense array math shared by every learnable operation, plus a
//! central-difference gradient checker.

mod conv;
mod gradcheck;
mod ops;

pub use conv::{conv2d, conv2d_backward, conv2d_strided, conv_transpose2x, ConvGrads, Kernel};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, Offender, REL_ERROR_EPS};
pub use ops::{matmul, matmul_transposed, relu, sigmoid, sigmoid_scalar, softmax_rows, softmax_rows_backward};
