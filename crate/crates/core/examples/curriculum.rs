//! A short regret-guided curriculum run. Prints the per-epoch log and the
//! final evaluation on the held-out mazes.

use add_core::orchestrator::{run, Method, RunConfig};

pub fn run_example() -> add_core::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.pretrain.dataset_size = 2000;
    cfg.pretrain.steps = 600;
    cfg.pretrain.lr = 3e-4;
    cfg.train.method = Method::Add;
    cfg.train.epochs = 30;
    cfg.train.eval_every = 10;
    let out = std::env::temp_dir().join("add-example-curriculum");
    let summary = run(&cfg, &out)?;
    println!("run directory {}", summary.dir.display());
    println!("epoch  return  blocks  path   regret");
    for r in &summary.rows {
        println!(
            "{:5}  {:6.3}  {:6.2}  {:5.2}  {:.4}",
            r.epoch,
            r.mean_return,
            r.mean_blocks,
            r.mean_shortest_path.unwrap_or(f64::NAN),
            r.mean_regret
        );
        for e in &r.eval {
            println!("       {:<12} solved {:.2}", e.name, e.solved_rate);
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
