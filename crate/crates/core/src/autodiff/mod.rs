//! Dense `f64` tensors with a tape-based reverse-mode differentiator.
//!
//! Only the primitives the classifier needs are provided. Spatial tensors are
//! laid out `[N, H, W, C]` (or `[H, W, C]` for a single example).

mod conv;
mod gradcheck;
mod graph;
mod tensor;

#[cfg(test)]
mod tests;

pub use conv::{output_extent, ConvSpec, Padding};
pub use gradcheck::{grad_check, relative_error, GradCheck, GradCheckReport, Mismatch};
pub use graph::{softmax_rows, CustomOp, DropoutKey, Graph, Mode, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: u32, rows: usize },
    #[error("label {label} is not a class index in 1..={classes} (0 is padding)")]
    InvalidLabel { label: u32, classes: usize },
    #[error("rate {0} must lie in [0, 1)")]
    InvalidRate(f64),
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward already ran on this graph; build it with accumulation to call it again")]
    BackwardAlreadyRun,
}
