//! Prints the held-out test mazes with their BFS metrics.

use add_core::envs::EnvFamily;

pub fn run_example() -> add_core::Result<()> {
    let family = EnvFamily::new(7)?;
    for (name, env) in family.test_suite()? {
        let m = env.metrics();
        println!("{name}: blocks {} shortest path {:?}", m.block_count, m.shortest_path);
        println!("{env}\n");
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
