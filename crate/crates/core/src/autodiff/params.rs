use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Result, UdnError};

/// Handle to a slot in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    /// Adam first moment, or the momentum buffer for SGD.
    first: Tensor,
    /// Adam second moment.
    second: Tensor,
    steps: u64,
}

/// Update rule applied by [`ParamStore::step`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64, weight_decay: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Momentum 0.9 with weight decay 1e-4.
    pub fn sgd_momentum() -> Self {
        Optimizer::SgdMomentum {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }

    pub fn sgd() -> Self {
        Optimizer::SgdMomentum {
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

/// Named parameter tensors with gradient accumulators and optimizer slots.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    slots: Vec<Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let [r, c] = value.shape();
        self.slots.push(Slot {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
            first: Tensor::zeros(r, c),
            second: Tensor::zeros(r, c),
            steps: 0,
        });
        ParamId(self.slots.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.slots[id.0].grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    /// Applies one update to the listed slots. Slots not listed are left
    /// untouched, including their optimizer state.
    pub fn step(&mut self, ids: &[ParamId], optimizer: &Optimizer, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(UdnError::Config(format!("learning rate must be positive, got {lr}")));
        }
        for &id in ids {
            let slot = &mut self.slots[id.0];
            slot.steps += 1;
            match *optimizer {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let t = slot.steps as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let w = slot.value.data_mut();
                    let g = slot.grad.data();
                    let m = slot.first.data_mut();
                    let v = slot.second.data_mut();
                    for i in 0..w.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                Optimizer::SgdMomentum {
                    momentum,
                    weight_decay,
                } => {
                    let first_step = slot.steps == 1;
                    let w = slot.value.data_mut();
                    let g = slot.grad.data();
                    let buf = slot.first.data_mut();
                    for i in 0..w.len() {
                        let d = g[i] + weight_decay * w[i];
                        buf[i] = if first_step { d } else { momentum * buf[i] + d };
                        w[i] -= lr * buf[i];
                    }
                }
            }
        }
        Ok(())
    }
}
