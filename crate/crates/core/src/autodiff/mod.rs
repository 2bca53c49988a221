//! Minimal reverse-mode differentiation for dense networks.

mod graph;
mod layers;
mod params;
mod tensor;

pub use graph::{log_sum_exp, Graph, Var};
pub use layers::{categorical_loglik, forward_dense, gaussian_loglik, Activation};
pub use params::{Optimizer, ParamId, ParamStore};
pub use tensor::Tensor;

/// `ln Γ(x)`. Only ever evaluated at constants, so it is not a graph op.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}
