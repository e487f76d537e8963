//! Central finite-difference verification of backpropagated gradients.
//!
//! The numerical side only ever calls the loss closure on perturbed
//! parameter values, so it shares nothing with the backward pass it audits.

use candle_core::{Tensor, Var};
use rand::seq::index::sample;

use crate::error::Result;
use crate::tensor::{self, Rng};

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over the checked entries.
    pub relative_error: f64,
    pub numeric_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.relative_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        !self.tensors.is_empty() && self.max_relative_error() <= tolerance
    }
}

/// Compares `loss.backward()` against central differences with step `h`,
/// probing at most `max_entries` randomly chosen entries per tensor.
///
/// Tensors whose numeric gradient norm is below `1e-12` on the probed entries
/// count as passing only when the analytic gradient is equally small.
pub fn check_gradients<F>(
    params: &[(String, Var)],
    loss: F,
    h: f64,
    max_entries: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    let grads = loss()?.backward()?;
    let mut report = GradCheckReport::default();
    for (name, var) in params {
        let n = var.elem_count();
        let analytic_full = match grads.get(var.as_tensor()) {
            Some(g) => tensor::to_vec(g)?,
            None => vec![0.0; n],
        };
        let base = tensor::to_vec(var.as_tensor())?;
        let shape = var.shape().clone();
        let picks: Vec<usize> = if n <= max_entries {
            (0..n).collect()
        } else {
            sample(rng, n, max_entries).into_vec()
        };
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        let mut nu2 = 0.0;
        let mut probe = base.clone();
        for &i in &picks {
            probe[i] = base[i] + h;
            var.set(&Tensor::from_vec(probe.clone(), shape.clone(), &tensor::DEVICE)?)?;
            let plus = tensor::scalar(&loss()?)?;
            probe[i] = base[i] - h;
            var.set(&Tensor::from_vec(probe.clone(), shape.clone(), &tensor::DEVICE)?)?;
            let minus = tensor::scalar(&loss()?)?;
            probe[i] = base[i];
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = analytic_full[i];
            diff2 += (analytic - numeric).powi(2);
            an2 += analytic * analytic;
            nu2 += numeric * numeric;
        }
        var.set(&Tensor::from_vec(base, shape, &tensor::DEVICE)?)?;
        let scale = an2.sqrt().max(nu2.sqrt());
        let relative_error = if scale < 1e-12 { diff2.sqrt() / 1e-12 } else { diff2.sqrt() / scale };
        report.tensors.push(TensorCheck {
            name: name.clone(),
            checked: picks.len(),
            relative_error,
            numeric_norm: nu2.sqrt(),
        });
    }
    Ok(report)
}
