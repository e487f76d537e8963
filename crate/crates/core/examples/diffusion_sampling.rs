//! Noise a signal, step it back with a known clean estimate, and run the
//! strided sampler with a denoiser that always knows the answer.

use facediff::diffcore;
use facediff::tensor::{randn, rng, to_vec};

fn main() -> facediff::Result<()> {
    let schedule = diffcore::build_schedule(1000, 1e-4, 2e-2)?;
    println!("alpha_bar at t = 1, 500, 1000: {:.4} {:.4} {:.6}", schedule.alpha_bar(1), schedule.alpha_bar(500), schedule.alpha_bar(1000));

    let mut r = rng(0);
    let x0 = randn((2, 3), &mut r)?;
    let eps = randn((2, 3), &mut r)?;
    let xt = diffcore::forward_diffuse(&x0, 400, &eps, &schedule)?;
    let back = diffcore::denoise_step(&xt, &x0, 400, &schedule, 0.0, None)?;
    let direct = diffcore::forward_diffuse(&x0, 399, &eps, &schedule)?;
    let err = to_vec(&(back - direct)?)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("deterministic step from t = 400 matches forward noising at 399 to {err:.1e}");

    println!("50-step subsequence starts {:?}", &diffcore::subsample_timesteps(1000, 50)?[..5]);
    for eta in [0.0, 1.0] {
        let out = diffcore::sample(|_, _| Ok(x0.clone()), (2, 3), &schedule, 50, eta, 3)?;
        let err = to_vec(&(out - &x0)?)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("eta {eta}: oracle denoiser lands {err:.1e} from the target");
    }
    Ok(())
}
