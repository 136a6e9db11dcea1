//! Trains the PPO agent on freshly drawn random mazes and reports how the
//! mean episodic return moves.

use add_core::agent::{collect, evaluate, ppo_update, PolicyModel, PpoHyper, PpoOptimizers, ValueModel};
use add_core::envs::{EnvFamily, MazeEnv};
use add_core::rng::Rng;

pub fn run_example() -> add_core::Result<()> {
    let family = EnvFamily::new(5)?;
    let hyper = PpoHyper {
        lr: 1e-3,
        ..PpoHyper::default()
    };
    let mut rng = Rng::new(1);
    let mut policy = PolicyModel::new(&hyper, &mut rng)?;
    let mut value = ValueModel::new(&hyper, &mut rng)?;
    let mut opt = PpoOptimizers::new(&hyper, &policy, &value);

    for iter in 0..40 {
        let mut envs: Vec<MazeEnv> = (0..8)
            .map(|_| family.decode(&family.random_param(&mut rng)))
            .collect::<add_core::Result<_>>()?;
        let batch = collect(&mut envs, &policy, &value, hyper.rollout_len, &mut rng)?;
        let stats = ppo_update(&mut policy, &mut value, &batch, &hyper, &mut opt, &mut rng)?;
        if iter % 10 == 9 {
            let mean = batch.episodes.iter().map(|e| e.ret).sum::<f64>() / batch.episodes.len().max(1) as f64;
            println!(
                "iteration {:2}: {} episodes, mean return {mean:.3}, entropy {:.3}",
                iter + 1,
                batch.episodes.len(),
                stats.entropy
            );
        }
    }
    for r in evaluate(&policy, &family.test_suite()?, 1, 0)? {
        println!("{:<12} solved {:.0}%", r.name, 100.0 * r.solved_rate);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
