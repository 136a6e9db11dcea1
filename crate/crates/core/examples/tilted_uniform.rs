//! Trains a one-dimensional generator on Uniform[0, 1], tilts it with the
//! reward `θ` and measures the total variation against the tilted density
//! `∝ e^{ωθ}`.

use add_core::orchestrator::{tilted_tv, train_uniform_generator, TvOptions};

pub fn run_example() -> add_core::Result<()> {
    let opts = TvOptions {
        train_steps: 3000,
        sample_steps: 50,
        ..TvOptions::default()
    };
    let model = train_uniform_generator(&opts)?;
    for omega in [0.0, 2.0] {
        let r = tilted_tv(&model, 20, omega, 20_000, &opts)?;
        println!("ω={omega}: TV {:.3}", r.tv);
        for (h, t) in r.histogram.iter().zip(&r.target).step_by(4) {
            println!("  sampled {h:.4}  target {t:.4}");
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
