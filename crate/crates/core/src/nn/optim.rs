use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};

use crate::error::Result;
use crate::tensor;

/// Rescales the gradients of `vars` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before rescaling.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += tensor::scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

/// Adam (no weight decay) over a fixed set of variables.
pub struct Adam {
    inner: AdamW,
    vars: Vec<Var>,
    max_grad_norm: Option<f64>,
}

impl Adam {
    pub fn new(vars: Vec<Var>, learning_rate: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr: learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(Self { inner: AdamW::new(vars.clone(), params)?, vars, max_grad_norm: None })
    }

    /// Clips every step's gradients with [`clip_grad_norm`].
    pub fn with_grad_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    /// Backpropagates `loss` and applies one update.
    pub fn step(&mut self, loss: &Tensor) -> Result<()> {
        let mut grads = loss.backward()?;
        if let Some(max_norm) = self.max_grad_norm {
            clip_grad_norm(&mut grads, &self.vars, max_norm)?;
        }
        self.inner.step(&grads)?;
        Ok(())
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.inner.set_learning_rate(lr);
    }
}
