//! Dense linear algebra and elementwise kernels shared by the engine.
//!
//! Everything here is a pure function with a fixed, sequential summation
//! order, so identical inputs give bitwise-identical outputs.

mod kernels;
mod mat;
mod real;

pub use kernels::{
    finite_diff_grad, log_softmax_at, rmsnorm, rmsnorm_into, rope_apply, rope_inv_freq,
    rope_rotate, sigmoid, silu, silu_grad, softmax_in_place, softmax_rows, top_b_indices,
};
pub use mat::{dot, matmul, matmul_t, t_matmul, Mat};
pub use real::{Precision, Real};
