//! Dense tensor alias and small shape helpers shared across the crate.
//!
//! All numeric data flows through dynamically-shaped `f64` arrays. Shapes are
//! plain `Vec<usize>`; modality semantics live in [`crate::conventions`].

use ndarray::{ArrayD, IxDyn};

/// Dense dynamically-shaped array used for every modality.
pub type Tensor = ArrayD<f64>;

/// Builds a zero-filled tensor with the given shape.
pub fn zeros(shape: &[usize]) -> Tensor {
    ArrayD::zeros(IxDyn(shape))
}

/// Largest absolute elementwise difference between two tensors.
///
/// Panics if the shapes differ; callers compare like against like.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff on mismatched shapes");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Formats a shape as `3x8x224x224` for error messages and reports.
pub fn fmt_shape(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}
