use candle_core::{Tensor, D};

use super::{Linear, ParamBuilder};
use crate::error::{ensure, Result};
use crate::tensor;

/// Logit applied to masked attention entries.
pub const MASKED_LOGIT: f64 = -1e9;

/// Additive attention bias `(n, n)`: 0 where `|i - j| <= radius`, a large
/// negative logit elsewhere. `None` radius means no masking.
pub fn band_bias(n: usize, radius: Option<usize>) -> Result<Tensor> {
    let mut data = vec![0.0; n * n];
    if let Some(k) = radius {
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) > k {
                    data[i * n + j] = MASKED_LOGIT;
                }
            }
        }
    }
    tensor::from_vec(data, (n, n))
}

/// Multi-head scaled dot-product attention with bias-free projections.
/// Queries come from `x`, keys and values from `context`.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new(
        b: &mut ParamBuilder,
        query_dim: usize,
        context_dim: usize,
        inner_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        ensure!(
            heads > 0 && inner_dim.is_multiple_of(heads),
            "attention width {inner_dim} not divisible by {heads} heads"
        );
        Ok(Self {
            q: Linear::new(&mut b.sub("q"), query_dim, inner_dim, false)?,
            k: Linear::new(&mut b.sub("k"), context_dim, inner_dim, false)?,
            v: Linear::new(&mut b.sub("v"), context_dim, inner_dim, false)?,
            out: Linear::new(&mut b.sub("out"), inner_dim, query_dim, false)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor, context: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward_with_probs(x, context, bias)?.0)
    }

    /// `x: (B, Nq, Cq)`, `context: (B, Nk, Cc)`, `bias: (Nq, Nk)`.
    /// Returns the projected output and the `(B, heads, Nq, Nk)` attention weights.
    pub fn forward_with_probs(
        &self,
        x: &Tensor,
        context: &Tensor,
        bias: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let (b, nq, _) = x.dims3()?;
        let (bc, nk, _) = context.dims3()?;
        ensure!(b == bc, "attention batch mismatch: {b} vs {bc}");
        let inner = self.q.out_dim();
        let dh = inner / self.heads;
        let split = |t: Tensor, n: usize| -> Result<Tensor> {
            Ok(t.reshape((b, n, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?, nq)?;
        let k = split(self.k.forward(context)?, nk)?;
        let v = split(self.v.forward(context)?, nk)?;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        if let Some(bias) = bias {
            ensure!(
                bias.dims() == [nq, nk],
                "attention bias shape {:?} != ({nq}, {nk})",
                bias.dims()
            );
            scores = scores.broadcast_add(bias)?;
        }
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let mixed = probs
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, nq, inner))?;
        Ok((self.out.forward(&mixed)?, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    #[test]
    fn band_bias_pattern() {
        let b = band_bias(4, Some(1)).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(b[0], vec![0.0, 0.0, MASKED_LOGIT, MASKED_LOGIT]);
        assert_eq!(b[2], vec![MASKED_LOGIT, 0.0, 0.0, 0.0]);
        let open = band_bias(3, None).unwrap();
        assert!(tensor::to_vec(&open).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn probs_are_row_stochastic() {
        let mut store = ParamStore::new();
        let mut rng = tensor::rng(3);
        let attn = CrossAttention::new(&mut ParamBuilder::init(&mut store, &mut rng), 8, 5, 8, 2).unwrap();
        let x = tensor::randn((2, 6, 8), &mut rng).unwrap();
        let c = tensor::randn((2, 6, 5), &mut rng).unwrap();
        let bias = band_bias(6, Some(1)).unwrap();
        let (_, p) = attn.forward_with_probs(&x, &c, Some(&bias)).unwrap();
        let sums = tensor::to_vec(&p.sum(D::Minus1).unwrap()).unwrap();
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }
}
