//! Small helpers shared by every module: seeded randomness and tensor glue.

use candle_core::{DType, Device, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Result};

/// All computation runs on the CPU in 64-bit floats.
pub const DEVICE: Device = Device::Cpu;
pub const DTYPE: DType = DType::F64;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a stream index into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Standard-normal tensor drawn from `rng`.
pub fn randn<S: Into<Shape>>(shape: S, rng: &mut Rng) -> Result<Tensor> {
    let shape = shape.into();
    let data = normal_vec(shape.elem_count(), rng);
    Ok(Tensor::from_vec(data, shape, &DEVICE)?)
}

pub fn from_vec<S: Into<Shape>>(data: Vec<f64>, shape: S) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &DEVICE)?)
}

pub fn zeros<S: Into<Shape>>(shape: S) -> Result<Tensor> {
    Ok(Tensor::zeros(shape, DTYPE, &DEVICE)?)
}

/// Row-major copy of all entries.
pub fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DTYPE)?.to_vec1::<f64>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DTYPE)?.flatten_all()?.to_vec1::<f64>()?[0])
}

/// Mean squared error over all entries, as a differentiable scalar.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure!(
        a.dims() == b.dims(),
        "mse shape mismatch: {:?} vs {:?}",
        a.dims(),
        b.dims()
    );
    Ok((a - b)?.sqr()?.mean_all()?)
}

pub fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    ensure!(
        a.dims() == b.dims(),
        "{what}: shape mismatch {:?} vs {:?}",
        a.dims(),
        b.dims()
    );
    Ok(())
}

pub fn all_finite(t: &Tensor) -> Result<bool> {
    Ok(to_vec(t)?.iter().all(|v| v.is_finite()))
}

/// Sinusoidal embedding of a scalar position; first half sines, second half cosines.
pub fn sinusoidal(position: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out[i] = (position * freq).sin();
        out[half + i] = (position * freq).cos();
    }
    out
}

/// `(n, dim)` table of sinusoidal embeddings for positions `0..n`.
pub fn sinusoidal_table(positions: &[f64], dim: usize) -> Result<Tensor> {
    let data: Vec<f64> = positions.iter().flat_map(|&p| sinusoidal(p, dim)).collect();
    from_vec(data, (positions.len(), dim))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn randn_is_reproducible() {
        let a = to_vec(&randn((3, 4), &mut rng(11)).unwrap()).unwrap();
        let b = to_vec(&randn((3, 4), &mut rng(11)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sinusoidal_at_zero() {
        let e = sinusoidal(0.0, 8);
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
    }
}
