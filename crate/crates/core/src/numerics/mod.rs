//! Dense matrices, reverse-mode gradients, gradient verification and optimizers.

pub mod gradcheck;
pub mod graph;
pub mod matrix;
pub mod nn;
pub mod optim;
pub mod param;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use matrix::Matrix;
pub use nn::Linear;
pub use optim::{AdamState, SgdState};
pub use param::{Param, Parameters};
