//! Pre-trains the maze generator on random mazes and compares the decoded
//! samples with the training data.

use add_core::diffusion::{sample, SampleOptions};
use add_core::orchestrator::{pretrain, summarize, RunConfig};

pub fn run_example() -> add_core::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.pretrain.dataset_size = 2000;
    cfg.pretrain.steps = 600;
    cfg.pretrain.lr = 3e-4;
    let dir = std::env::temp_dir().join("add-example-pretrain");
    let p = pretrain(&cfg, &dir)?;
    println!("final loss {:?}, artifacts in {}", p.log.final_loss, dir.display());

    let data = add_core::envs::read_dataset(&dir.join("dataset.bin"))?.1;
    let opts = SampleOptions::new(cfg.diffusion.sample_steps, 200, 9).clipped(0.0, 1.0);
    let (theta, _) = sample(&p.generator, None, &opts)?;
    for (name, x) in [("dataset", &data), ("samples", &theta)] {
        let metrics = (0..200)
            .map(|i| cfg.env.decode(x.row(i)).map(|e| e.metrics()))
            .collect::<add_core::Result<Vec<_>>>()?;
        let s = summarize(metrics);
        println!(
            "{name}: mean blocks {:.2}, mean shortest path {:?}, solvable {:.2}",
            s.mean_blocks, s.mean_shortest_path, s.solvable_frac
        );
    }
    println!("{}", cfg.env.decode(theta.row(0))?);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
