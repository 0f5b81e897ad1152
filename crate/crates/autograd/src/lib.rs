//! Tape-based reverse-mode automatic differentiation over dense row-major
//! CPU tensors.
//!
//! A [`Graph`] records one forward pass; [`Var`] handles carry the op
//! methods. Parameters live in a [`ParamStore`] outside the graph so a new
//! tape can be built every optimization step. Kernels run data-parallel
//! through rayon with the `parallel` feature and sequentially without it;
//! both paths produce identical bits.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod ops;
pub mod parallel;
pub mod params;
pub mod real;
pub mod tensor;

pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use kernels::conv::ConvSpec;
pub use ops::NormStats;
pub use parallel::Exec;
pub use params::{ParamId, ParamKind, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
