//! Signal-agnostic diffusion machinery shared by both stages.
//!
//! Models predict the clean signal `x0`; sampling applies the deterministic
//! (or partially stochastic, via `eta`) implicit update between subsampled
//! timesteps.

use candle_core::{Shape, Tensor};

use crate::error::{ensure, Result};
use crate::tensor::{self, Rng};

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;
pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_INFERENCE_STEPS: usize = 50;

/// Cumulative signal fractions `alpha_bar[0..=T]`, with `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the schedule from explicit per-step betas `beta_1..beta_T`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        ensure!(!betas.is_empty(), "schedule needs at least one step");
        ensure!(
            betas.iter().all(|&b| b > 0.0 && b < 1.0),
            "every beta must lie in (0, 1)"
        );
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        ensure!(t <= self.timesteps(), "timestep {t} exceeds T = {}", self.timesteps());
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        build_schedule(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

/// Linear betas from `beta_start` to `beta_end` over `T` steps.
pub fn build_schedule(t: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    ensure!(t >= 1, "T must be >= 1");
    ensure!(
        beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
        "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
    );
    let betas: Vec<f64> = (0..t)
        .map(|i| {
            if t == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(&betas)
}

/// `sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps`.
pub fn forward_diffuse(x0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    tensor::same_shape(x0, eps, "forward_diffuse")?;
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    Ok(((x0 * ab.sqrt())? + (eps * (1.0 - ab).sqrt())?)?)
}

/// Batched forward process: row `b` of `x0` (leading axis) is noised at `ts[b]`.
pub fn forward_diffuse_batch(
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    tensor::same_shape(x0, eps, "forward_diffuse_batch")?;
    let b = x0.dims()[0];
    ensure!(ts.len() == b, "need {b} timesteps, got {}", ts.len());
    for &t in ts {
        schedule.check_t(t)?;
    }
    let mut bshape = vec![1usize; x0.rank()];
    bshape[0] = b;
    let signal: Vec<f64> = ts.iter().map(|&t| schedule.alpha_bar(t).sqrt()).collect();
    let noise: Vec<f64> = ts.iter().map(|&t| (1.0 - schedule.alpha_bar(t)).sqrt()).collect();
    let signal = tensor::from_vec(signal, bshape.clone())?;
    let noise = tensor::from_vec(noise, bshape)?;
    Ok((x0.broadcast_mul(&signal)? + eps.broadcast_mul(&noise)?)?)
}

/// One implicit update from timestep `t` to the earlier `t_prev`.
///
/// `sqrt(ab_prev) x0_hat + sqrt(1 - ab_prev - sigma^2) / sqrt(1 - ab_t) * (x_t - sqrt(ab_t) x0_hat) + sigma eps`.
/// `eps` may be omitted only when `sigma == 0`.
pub fn denoise_step_to(
    x_t: &Tensor,
    x0_hat: &Tensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    sigma: f64,
    eps: Option<&Tensor>,
) -> Result<Tensor> {
    tensor::same_shape(x_t, x0_hat, "denoise_step")?;
    schedule.check_t(t)?;
    ensure!(t >= 1 && t_prev < t, "need 1 <= t and t_prev < t, got t = {t}, t_prev = {t_prev}");
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let residual_var = 1.0 - ab_prev - sigma * sigma;
    ensure!(
        residual_var >= -1e-15,
        "sigma^2 = {} exceeds 1 - alpha_bar_prev = {}",
        sigma * sigma,
        1.0 - ab_prev
    );
    let dir_coef = residual_var.max(0.0).sqrt() / (1.0 - ab_t).sqrt();
    let direction = (x_t - (x0_hat * ab_t.sqrt())?)?;
    let mut out = ((x0_hat * ab_prev.sqrt())? + (direction * dir_coef)?)?;
    if sigma != 0.0 {
        let eps = eps.ok_or_else(|| crate::error::invalid!("sigma > 0 requires a noise sample"))?;
        tensor::same_shape(x_t, eps, "denoise_step noise")?;
        out = (out + (eps * sigma)?)?;
    }
    Ok(out)
}

/// [`denoise_step_to`] with `t_prev = t - 1`.
pub fn denoise_step(
    x_t: &Tensor,
    x0_hat: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    sigma: f64,
    eps: Option<&Tensor>,
) -> Result<Tensor> {
    ensure!(t >= 1, "denoise_step needs t >= 1");
    denoise_step_to(x_t, x0_hat, t, t - 1, schedule, sigma, eps)
}

/// `steps` strictly decreasing timesteps from `T` down to 1.
pub fn subsample_timesteps(t: usize, steps: usize) -> Result<Vec<usize>> {
    ensure!(steps >= 1 && steps <= t, "need 1 <= steps <= T, got steps = {steps}, T = {t}");
    if steps == 1 {
        return Ok(vec![t]);
    }
    // Evenly spaced in [1, T]; rounding cannot collide because spacing >= 1.
    Ok((0..steps)
        .map(|i| {
            let frac = i as f64 / (steps - 1) as f64;
            (t as f64 - frac * (t - 1) as f64).round() as usize
        })
        .collect())
}

/// Noise scale for the `eta`-interpolated update between `t` and `t_prev`.
pub fn ddim_sigma(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).max(0.0).sqrt()
}

/// Runs the reverse process from seeded Gaussian noise.
///
/// `denoiser(x_t, t)` must return the predicted clean signal; any condition
/// is captured by the closure. With `eta = 0` the result is a pure function
/// of `(seed, denoiser)`.
pub fn sample<S, F>(
    mut denoiser: F,
    shape: S,
    schedule: &NoiseSchedule,
    steps: usize,
    eta: f64,
    seed: u64,
) -> Result<Tensor>
where
    S: Into<Shape>,
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    ensure!((0.0..=1.0).contains(&eta), "eta {eta} outside [0, 1]");
    let times = subsample_timesteps(schedule.timesteps(), steps)?;
    let shape = shape.into();
    let mut rng: Rng = tensor::rng(seed);
    let mut x = tensor::randn(shape.clone(), &mut rng)?;
    for (i, &t) in times.iter().enumerate() {
        let t_prev = times.get(i + 1).copied().unwrap_or(0);
        let x0_hat = denoiser(&x, t)?;
        let sigma = ddim_sigma(schedule, t, t_prev, eta);
        let eps = if sigma > 0.0 { Some(tensor::randn(shape.clone(), &mut rng)?) } else { None };
        x = denoise_step_to(&x, &x0_hat, t, t_prev, schedule, sigma, eps.as_ref())?;
    }
    Ok(x)
}

/// x0-prediction objective: mean squared error between target and prediction.
pub fn x0_loss(x0: &Tensor, prediction: &Tensor) -> Result<Tensor> {
    tensor::mse(x0, prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{randn, rng, to_vec};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
    }

    #[test]
    fn two_step_hand_product() {
        let s = build_schedule(2, 0.1, 0.2).unwrap();
        assert!(close(s.alpha_bars(), &[1.0, 0.9, 0.72], 1e-15));
    }

    #[test]
    fn default_schedule_decays_below_1e4() {
        let s = build_schedule(1000, 1e-4, 2e-2).unwrap();
        // Direct product of (1 - beta_t), computed independently of the builder.
        let direct: f64 = (0..1000).map(|i| 1.0 - (1e-4 + (2e-2 - 1e-4) * i as f64 / 999.0)).product();
        assert!((s.alpha_bar(1000) - direct).abs() < 1e-15);
        assert!(s.alpha_bar(1000) < 1e-4);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s, build_schedule(1000, 1e-4, 2e-2).unwrap());
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(build_schedule(0, 0.1, 0.2).is_err());
        assert!(build_schedule(5, 0.0, 0.2).is_err());
        assert!(build_schedule(5, 0.3, 0.2).is_err());
        assert!(build_schedule(5, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_endpoints() {
        let s = build_schedule(10, 0.1, 0.9).unwrap();
        let mut r = rng(0);
        let x0 = randn((3, 2), &mut r).unwrap();
        let eps = randn((3, 2), &mut r).unwrap();
        assert_eq!(to_vec(&forward_diffuse(&x0, 0, &eps, &s).unwrap()).unwrap(), to_vec(&x0).unwrap());
        // alpha_bar = f64::EPSILON: the signal term is ~1.5e-8 of x0.
        let s = NoiseSchedule::from_betas(&[1.0 - f64::EPSILON]).unwrap();
        let xt = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        assert!(close(&to_vec(&xt).unwrap(), &to_vec(&eps).unwrap(), 1e-7));
        assert!(forward_diffuse(&x0, 0, &randn(3, &mut r).unwrap(), &s).is_err());
    }

    #[test]
    fn forward_variance_monte_carlo() {
        let s = NoiseSchedule::default();
        let mut r = rng(42);
        let x0 = randn(100_000, &mut r).unwrap();
        let eps = randn(100_000, &mut r).unwrap();
        let xt = to_vec(&forward_diffuse(&x0, 500, &eps, &s).unwrap()).unwrap();
        let mean = xt.iter().sum::<f64>() / xt.len() as f64;
        let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xt.len() as f64;
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn exact_prediction_lands_on_previous_marginal() {
        let s = NoiseSchedule::default();
        let mut r = rng(1);
        let x0 = randn(16, &mut r).unwrap();
        let eps = randn(16, &mut r).unwrap();
        let xt = forward_diffuse(&x0, 300, &eps, &s).unwrap();
        let out = denoise_step(&xt, &x0, 300, &s, 0.0, None).unwrap();
        let ab = s.alpha_bar(299);
        let expected: Vec<f64> = to_vec(&x0)
            .unwrap()
            .iter()
            .zip(to_vec(&eps).unwrap())
            .map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
            .collect();
        assert!(close(&to_vec(&out).unwrap(), &expected, 1e-12));
    }

    #[test]
    fn identity_and_terminal_steps() {
        // alpha_bar_{t-1} == alpha_bar_t cannot come from betas in (0, 1), so
        // exercise the identity through denoise_step_to on equal fractions.
        let s = NoiseSchedule { alpha_bar: vec![1.0, 0.6, 0.6] };
        let mut r = rng(2);
        let xt = randn(5, &mut r).unwrap();
        let x0_hat = randn(5, &mut r).unwrap();
        let same = denoise_step(&xt, &x0_hat, 2, &s, 0.0, None).unwrap();
        assert!(close(&to_vec(&same).unwrap(), &to_vec(&xt).unwrap(), 1e-15));
        let last = denoise_step(&xt, &x0_hat, 1, &s, 0.0, None).unwrap();
        assert_eq!(to_vec(&last).unwrap(), to_vec(&x0_hat).unwrap());
    }

    #[test]
    fn oversized_sigma_is_rejected() {
        let s = build_schedule(10, 0.1, 0.2).unwrap();
        let x = tensor::zeros(3).unwrap();
        let bound = (1.0 - s.alpha_bar(4)).sqrt();
        assert!(denoise_step(&x, &x, 5, &s, bound * 1.01, Some(&x)).is_err());
        assert!(denoise_step(&x, &x, 5, &s, bound * 0.99, Some(&x)).is_ok());
        assert!(denoise_step(&x, &x, 5, &s, 0.1, None).is_err());
    }

    #[test]
    fn subsampling_cases() {
        assert_eq!(subsample_timesteps(4, 4).unwrap(), vec![4, 3, 2, 1]);
        assert_eq!(subsample_timesteps(10, 1).unwrap(), vec![10]);
        assert!(subsample_timesteps(10, 11).is_err());
        assert!(subsample_timesteps(10, 0).is_err());
        let ts = subsample_timesteps(1000, 50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!((ts[0], ts[49]), (1000, 1));
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn constant_denoiser_collapses_to_constant() {
        let s = build_schedule(100, 1e-3, 5e-2).unwrap();
        let c = Tensor::full(0.75f64, (2, 3), &tensor::DEVICE).unwrap();
        for steps in [1, 7, 100] {
            let out = sample(|_, _| Ok(c.clone()), (2, 3), &s, steps, 0.0, 3).unwrap();
            assert!(close(&to_vec(&out).unwrap(), &[0.75; 6], 1e-12));
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let s = build_schedule(50, 1e-3, 5e-2).unwrap();
        let run = |seed, eta| {
            to_vec(&sample(|x, _| Ok((x * 0.5).unwrap()), 4, &s, 10, eta, seed).unwrap()).unwrap()
        };
        assert_eq!(run(9, 0.0), run(9, 0.0));
        assert_eq!(run(9, 1.0), run(9, 1.0));
        assert_ne!(run(9, 1.0), run(9, 0.0));
        assert_ne!(run(9, 0.0), run(10, 0.0));
    }

    #[test]
    fn perfect_denoiser_recovers_signal() {
        let s = NoiseSchedule::default();
        let target = randn((5, 4), &mut rng(77)).unwrap();
        let out = sample(|_, _| Ok(target.clone()), (5, 4), &s, 1000, 0.0, 1).unwrap();
        assert!(close(&to_vec(&out).unwrap(), &to_vec(&target).unwrap(), 1e-6));
    }

    #[test]
    fn x0_loss_of_perfect_predictor_is_zero() {
        let x = randn(7, &mut rng(0)).unwrap();
        assert_eq!(tensor::scalar(&x0_loss(&x, &x).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn batch_forward_matches_rowwise() {
        let s = NoiseSchedule::default();
        let mut r = rng(3);
        let x0 = randn((3, 2, 2), &mut r).unwrap();
        let eps = randn((3, 2, 2), &mut r).unwrap();
        let ts = [1, 400, 1000];
        let batch = forward_diffuse_batch(&x0, &ts, &eps, &s).unwrap();
        for (b, &t) in ts.iter().enumerate() {
            let one = forward_diffuse(&x0.get(b).unwrap(), t, &eps.get(b).unwrap(), &s).unwrap();
            assert!(close(&to_vec(&batch.get(b).unwrap()).unwrap(), &to_vec(&one).unwrap(), 1e-15));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn forward_backward_consistency(seed in 0u64..10_000, t in 1usize..=1000) {
            let s = NoiseSchedule::default();
            let mut r = rng(seed);
            let x0 = randn(8, &mut r).unwrap();
            let eps = randn(8, &mut r).unwrap();
            let xt = forward_diffuse(&x0, t, &eps, &s).unwrap();
            let back = denoise_step(&xt, &x0, t, &s, 0.0, None).unwrap();
            let prev = forward_diffuse(&x0, t - 1, &eps, &s).unwrap();
            prop_assert!(close(&to_vec(&back).unwrap(), &to_vec(&prev).unwrap(), 1e-8));
        }
    }
}
