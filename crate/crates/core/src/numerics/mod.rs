//! Dense matrices, layer primitives and reverse-mode gradients.

pub mod gradcheck;
pub mod graph;
pub mod layers;
mod matrix;
pub mod ops;

pub use gradcheck::{finite_diff_gradient, max_relative_error, relative_error};
pub use graph::{Fault, Gradients, Graph, Var};
pub use layers::{
    Activation, BnUpdate, Forward, LayerSpec, Mlp, MlpSpec, Mode, Norm, Param, ParamStore,
};
pub use matrix::Matrix;
pub use ops::{context_normalize, l2_normalize_rows, CN_EPS, L2_EPS};
