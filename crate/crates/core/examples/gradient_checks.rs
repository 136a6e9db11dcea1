//! Runs the finite-difference suite over every loss and guidance signal.

use add_core::orchestrator::gradient_suite;

pub fn run_example() -> add_core::Result<()> {
    for r in gradient_suite(20, 1, 1e-3)? {
        println!(
            "{:<20} {} instances, worst relative error {:.2e} {}",
            r.name,
            r.instances,
            r.worst,
            if r.passed() { "ok" } else { "FAILED" }
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
