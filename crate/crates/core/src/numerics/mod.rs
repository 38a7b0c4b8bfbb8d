//! Dense 2-D tensors and a tape-based reverse-mode differentiator.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, SeqLayout, Var};
pub use tensor::Tensor;

/// `libm` wrappers so the rest of the crate reads like ordinary float code.
pub mod math {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn ln_1p(x: f64) -> f64 {
        libm::log1p(x)
    }
}

/// Dot product of equally long slices.
pub fn dot_product(a: &[f64], b: &[f64]) -> f64 {
    tensor::dot(a, b)
}

/// In-place max-stabilised softmax of one row.
pub fn softmax_row(row: &mut [f64]) {
    graph::softmax_in_place(row)
}
