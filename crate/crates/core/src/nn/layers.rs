use candle_core::{Tensor, Var, D};

use super::{Init, ParamBuilder};
use crate::error::Result;

/// Logistic function built from differentiable primitives.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Affine map `x W + b` over the last axis; `W` is stored `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = b.var("weight", (in_dim, out_dim), Init::Normal(1.0 / (in_dim as f64).sqrt()))?;
        let bias = if bias {
            Some(b.var("bias", out_dim, Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = if x.rank() == 2 {
            x.matmul(self.weight.as_tensor())?
        } else {
            x.broadcast_matmul(self.weight.as_tensor())?
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b.as_tensor())?,
            None => y,
        })
    }
}

/// Normalization over the last axis with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.var("gamma", dim, Init::Ones)?,
            beta: b.var("beta", dim, Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

/// Group normalization for `(B, C, H, W)` feature maps.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: Var,
    pub beta: Var,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(b: &mut ParamBuilder, groups: usize, channels: usize) -> Result<Self> {
        crate::error::ensure!(
            groups > 0 && channels.is_multiple_of(groups),
            "group norm: {channels} channels not divisible into {groups} groups"
        );
        Ok(Self {
            gamma: b.var("gamma", channels, Init::Ones)?,
            beta: b.var("beta", channels, Init::Zeros)?,
            groups,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let g = x.reshape((b, self.groups, (c / self.groups) * h * w))?;
        let mean = g.mean_keepdim(D::Minus1)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .reshape((b, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

/// Square-kernel 2-D convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        b: &mut ParamBuilder,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        Ok(Self {
            weight: b.var("weight", (out_ch, in_ch, kernel, kernel), Init::Normal(1.0 / fan_in.sqrt()))?,
            bias: b.var("bias", out_ch, Init::Zeros)?,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let c = self.out_channels();
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}
