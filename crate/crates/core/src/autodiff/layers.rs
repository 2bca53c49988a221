use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Result, UdnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// `activation(input · weight + bias)`.
pub fn forward_dense(g: &mut Graph, input: Var, weight: Var, bias: Var, activation: Activation) -> Result<Var> {
    let z = g.matmul(input, weight)?;
    let z = g.add_row(z, bias)?;
    Ok(match activation {
        Activation::Relu => g.relu(z),
        Activation::Identity => z,
    })
}

/// `Σ_i log softmax(logits_i)[labels_i]`.
pub fn categorical_loglik(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let classes = g.value(logits).cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(UdnError::Index {
            index: bad,
            bound: classes,
        });
    }
    let lp = g.log_softmax(logits);
    let picked = g.pick(lp, labels)?;
    Ok(g.sum(picked))
}

/// `Σ_i [-½ log(2πσ²) - (y_i - μ_i)² / (2σ²)]`.
pub fn gaussian_loglik(g: &mut Graph, mean: Var, targets: &Tensor, sigma: f64) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(UdnError::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if g.value(mean).shape() != targets.shape() {
        return Err(UdnError::dim(
            "gaussian_loglik",
            format!("{:?} vs {:?}", g.value(mean).shape(), targets.shape()),
        ));
    }
    let n = targets.len() as f64;
    let y = g.constant(targets.clone());
    let resid = g.sub(mean, y)?;
    let ss = g.sum_squares(resid);
    let scaled = g.scale(ss, -0.5 / (sigma * sigma));
    Ok(g.offset(scaled, -0.5 * n * (2.0 * std::f64::consts::PI * sigma * sigma).ln()))
}
