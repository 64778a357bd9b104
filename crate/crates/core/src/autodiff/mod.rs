//! Reverse-mode automatic differentiation with support for gradients of
//! gradients.
//!
//! A [`Graph`] is a tape that records each op applied to an attached
//! [`Tensor`]. [`grad`] sweeps the tape backwards; with `create_graph` the
//! sweep records its own ops so the result can be differentiated again, which
//! is what [`hvp`] and exact bilevel meta-gradients rely on.

mod backward;
mod op;
mod params;
mod tensor;

pub use backward::{grad, hvp};
pub use op::OpKind;
pub use params::{finite_diff_grad, rel_err, GradientMap, Parameters};
pub use tensor::{forward, Graph, Tensor};

#[cfg(test)]
mod tests;
