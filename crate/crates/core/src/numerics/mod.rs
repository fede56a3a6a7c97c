//! Dense matrices, reverse-mode differentiation, random streams and a
//! finite-difference checker. Everything else in the crate is built on these.

mod gradcheck;
pub(crate) mod graph;
mod matrix;
mod rng;

pub use gradcheck::{central_difference, finite_diff_check, relative_error};
pub use graph::{Gradients, Graph, NodeId};
pub use matrix::{softmax_in_place, Matrix};
pub use rng::{gumbel_from_uniform, gumbel_sample, Rng};
