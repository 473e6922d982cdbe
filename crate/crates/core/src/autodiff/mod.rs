//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] is a tape: every operation evaluates eagerly, appends a node
//! and records what it needs for its vector-Jacobian product. Nodes are
//! appended in topological order, so [`Graph::backward`] is a single reverse
//! sweep. Trainable tensors live in a [`ParamStore`] and enter a graph through
//! [`Graph::param`].
//!
//! Everything is generic over [`Real`]; tests and gradient checks run in
//! `f64`, training in `f32`.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adamw_step, sgd_step, AdamW, AdamWState};
pub use params::{Init, ParamId, ParamStore};
pub use tensor::{DType, Real, Tensor};
