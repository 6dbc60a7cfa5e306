//! Reverse-mode differentiable computation over small dense tensors: the
//! substrate under every network and loss in this crate.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod real;

pub use adam::Adam;
pub use gradcheck::{gradcheck, GradcheckReport};
pub use graph::{concat_cols, concat_rows, Graph, Shape, Tensor};
pub use params::{Param, ParamSet};
pub use real::Real;

#[cfg(test)]
mod tests;
