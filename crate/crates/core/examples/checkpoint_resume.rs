//! Interrupts a run halfway, resumes it from the checkpoint and checks the
//! metrics log against an uninterrupted run.

use add_core::orchestrator::{load_or_pretrain, metrics_path, run_with_generator, RunConfig};

pub fn run_example() -> add_core::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.pretrain.dataset_size = 500;
    cfg.pretrain.steps = 200;
    cfg.train.eval_every = 3;
    cfg.train.checkpoint_every = 3;
    let root = std::env::temp_dir().join("add-example-resume");
    let _ = std::fs::remove_dir_all(&root);
    let generator = load_or_pretrain(&cfg, &root)?;

    let (a, b) = (root.join("straight"), root.join("resumed"));
    cfg.train.epochs = 8;
    run_with_generator(&cfg, &a, generator.clone())?;
    cfg.train.epochs = 4;
    run_with_generator(&cfg, &b, generator.clone())?;
    cfg.train.epochs = 8;
    let resumed = run_with_generator(&cfg, &b, generator)?;
    println!("resumed run produced epochs {:?}", resumed.rows.iter().map(|r| r.epoch).collect::<Vec<_>>());

    let read = |dir: &std::path::Path| std::fs::read_to_string(metrics_path(&cfg, dir)).expect("metrics written");
    let same = read(&a) == read(&b);
    println!("metrics identical to the uninterrupted run: {same}");
    print!("{}", read(&b));
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
