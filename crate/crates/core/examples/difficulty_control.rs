//! Trains briefly, then steers generation toward the easiest and the hardest
//! return bins of the critic and compares the resulting mazes.

use add_core::orchestrator::{controllable_generate, run, RunConfig};

pub fn run_example() -> add_core::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.pretrain.dataset_size = 2000;
    cfg.pretrain.steps = 600;
    cfg.pretrain.lr = 3e-4;
    cfg.train.epochs = 20;
    cfg.train.eval_every = 0;
    let out = std::env::temp_dir().join("add-example-difficulty");
    let state = run(&cfg, &out)?.state.expect("epochs > 0");
    let m = cfg.support.bins;
    for level in [1, m / 2, m] {
        let r = controllable_generate(&state.generator, &state.critic, &cfg, level, 100, 5, state.critic_updates > 0)?;
        println!(
            "difficulty {level:3}: mean blocks {:.2}, mean shortest path {:?}, solvable {:.2}",
            r.summary.mean_blocks, r.summary.mean_shortest_path, r.summary.solvable_frac
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
