//! Dense rank-4 `f64` tensors with reverse-mode differentiation.
//!
//! Convolutions are cross-correlations (no kernel flip). Broadcasting is limited to
//! per-channel bias addition and per-channel scaling.

mod conv;
pub mod gradcheck;
mod graph;
mod linalg;
mod ops;
mod tensor;

pub use conv::ConvGeometry;
pub use gradcheck::{gradient_check, gradient_check_many, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::{Activation, DEFAULT_LEAKY_SLOPE};
pub use tensor::{Shape, Tensor};

