//! Guides the exact score of `N(0, I)` with a linear reward `a·θ`. The
//! guided sampler should land on `N(ω·a, I)`.

use add_core::orchestrator::verify_gaussian_guidance;

pub fn run_example() -> add_core::Result<()> {
    let a = [0.8f32, -0.5];
    for omega in [0.0, 1.0, 2.0] {
        let r = verify_gaussian_guidance(omega, &a, 10_000, 3)?;
        println!(
            "ω={omega}: target mean {:?}, sample mean {:?}, variance {:?}",
            r.target_mean, r.mean, r.var
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
