//! Noises a fixed point and compares the empirical moments with the
//! closed-form marginal `N(√ᾱ_t·θ0, 1 − ᾱ_t)`, both in one jump and by
//! iterating single steps.

use add_core::diffcore::Tensor;
use add_core::diffusion::{forward_marginal, forward_step, NoiseSchedule};
use add_core::rng::Rng;

fn moments(x: &Tensor) -> (f64, f64) {
    let n = x.numel() as f64;
    let m = x.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let v = x.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
    (m, v)
}

pub fn run_example() -> add_core::Result<()> {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let n = 10_000;
    let theta0 = Tensor::matrix(n, 1, vec![1.5; n])?;
    let mut rng = Rng::new(7);
    for t in [250, 500, 1000] {
        let ab = sched.alpha_bar(t);
        let eps = Tensor::matrix(n, 1, rng.normal_vec(n))?;
        let (m1, v1) = moments(&forward_marginal(&theta0, t, &eps, &sched)?);
        let mut x = theta0.clone();
        for s in 1..=t {
            x = forward_step(&x, s, &Tensor::matrix(n, 1, rng.normal_vec(n))?, &sched)?;
        }
        let (m2, v2) = moments(&x);
        println!(
            "t={t:4}: expected mean {:.4} var {:.4} | jump {m1:.4} {v1:.4} | iterated {m2:.4} {v2:.4}",
            ab.sqrt() * 1.5,
            1.0 - ab
        );
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
