use std::path::Path;

use add_core::orchestrator::{
    checkpoint_path, load_or_pretrain, load_state, metrics_path, read_metrics, run, run_dir, Method, RunConfig, TrainState,
    train_epoch,
};
use add_core::regret::CriticModel;
use add_core::Error;

fn tiny(method: Method) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("pretrain.dataset_size", "200"),
        ("pretrain.steps", "40"),
        ("generator.hidden", "32"),
        ("critic.hidden", "32"),
        ("critic.buffer", "64"),
        ("critic.minibatches", "16"),
        ("ppo.rollout_len", "32"),
        ("train.epochs", "4"),
        ("train.eval_every", "2"),
        ("train.checkpoint_every", "2"),
        ("diffusion.sample_steps", "20"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.seed = 3;
    cfg.train.method = method;
    cfg
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn identical_runs_are_bit_identical() {
    let cfg = tiny(Method::Add);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&cfg, a.path()).unwrap();
    run(&cfg, b.path()).unwrap();
    for name in ["metrics.csv", "eval.csv", "checkpoint.ckpt", "config.txt"] {
        let rel = run_dir(&cfg, Path::new("")).join(name);
        assert_eq!(bytes(&a.path().join(&rel)), bytes(&b.path().join(&rel)), "{name}");
    }
    for name in ["generator.ckpt", "dataset.bin"] {
        let rel = Path::new(&cfg.pretrain_name()).join(name);
        assert_eq!(bytes(&a.path().join(&rel)), bytes(&b.path().join(&rel)), "{name}");
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for method in [Method::Add, Method::Dr] {
        let mut cfg = tiny(method);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run(&cfg, a.path()).unwrap();
        cfg.train.epochs = 2;
        run(&cfg, b.path()).unwrap();
        cfg.train.epochs = 4;
        let resumed = run(&cfg, b.path()).unwrap();
        assert_eq!(resumed.rows.first().map(|r| r.epoch), Some(2));
        assert_eq!(bytes(&metrics_path(&cfg, a.path())), bytes(&metrics_path(&cfg, b.path())));
        assert_eq!(bytes(&checkpoint_path(&cfg, a.path())), bytes(&checkpoint_path(&cfg, b.path())));
    }
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let cfg = tiny(Method::Add);
    let dir = tempfile::tempdir().unwrap();
    let summary = run(&cfg, dir.path()).unwrap();
    let loaded = load_state(&cfg, dir.path()).unwrap();
    assert_eq!(&loaded, summary.state.as_ref().unwrap());
    assert_eq!(loaded.to_checkpoint().unwrap().to_bytes().unwrap(), bytes(&checkpoint_path(&cfg, dir.path())));
}

#[test]
fn zero_epochs_only_pretrains() {
    let mut cfg = tiny(Method::Add);
    cfg.train.epochs = 0;
    let dir = tempfile::tempdir().unwrap();
    let summary = run(&cfg, dir.path()).unwrap();
    assert!(summary.rows.is_empty());
    assert!(dir.path().join(cfg.pretrain_name()).join("generator.ckpt").exists());
    assert!(!run_dir(&cfg, dir.path()).exists());
}

#[test]
fn missing_and_corrupt_checkpoints_are_io_errors() {
    let cfg = tiny(Method::Add);
    let dir = tempfile::tempdir().unwrap();
    let err = load_state(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 3);

    run(&cfg, dir.path()).unwrap();
    let path = checkpoint_path(&cfg, dir.path());
    let full = bytes(&path);
    std::fs::write(&path, &full[..full.len() - 7]).unwrap();
    let err = load_state(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Corrupt { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn log_rows_are_ordered_and_complete() {
    let cfg = tiny(Method::Unguided);
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path()).unwrap();
    let rows = read_metrics(&metrics_path(&cfg, dir.path())).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.solvable_frac));
        assert_eq!(r.eval_env.is_some(), r.epoch % 2 == 1);
    }
    let eval = std::fs::read_to_string(run_dir(&cfg, dir.path()).join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 1 + 2 * 5);
}

#[test]
fn only_add_queries_the_critic_gradient() {
    let dir = tempfile::tempdir().unwrap();
    for method in [Method::Add, Method::Dr, Method::Unguided] {
        let cfg = tiny(method);
        let generator = load_or_pretrain(&cfg, dir.path()).unwrap();
        let mut state = TrainState::new(&cfg, generator).unwrap();
        train_epoch(&mut state).unwrap();
        assert_eq!(state.guidance_calls > 0, method == Method::Add, "{method}");
        assert_eq!(state.critic_updates, 1, "{method}");
    }
}

#[test]
fn constant_critic_makes_add_match_unguided() {
    let dir = tempfile::tempdir().unwrap();
    let add = tiny(Method::Add);
    let generator = load_or_pretrain(&add, dir.path()).unwrap();
    let mut a = TrainState::new(&add, generator.clone()).unwrap();
    a.critic = CriticModel::constant(add.critic_spec().unwrap(), add.return_support().unwrap(), add.schedule().unwrap()).unwrap();
    let mut u = TrainState::new(&tiny(Method::Unguided), generator).unwrap();
    assert_eq!(a.generate(8, "epoch0").unwrap(), u.generate(8, "epoch0").unwrap());
}
