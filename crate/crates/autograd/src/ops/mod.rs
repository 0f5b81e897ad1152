//! Differentiable ops, implemented as methods on [`crate::Var`].

mod linalg;
mod loss;
mod norm;
mod pointwise;
mod reduce;
mod shape;
mod spatial;

pub use norm::NormStats;
