use std::path::Path;
use std::process::{Command, Output};

fn add(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_add"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("ADD_LOG", "warn")
        .output()
        .expect("spawn add")
}

const TINY: [&str; 12] = [
    "--set", "pretrain.dataset_size=100",
    "--set", "pretrain.steps=20",
    "--set", "generator.hidden=16",
    "--set", "critic.hidden=16",
    "--set", "train.epochs=2",
    "--set", "ppo.rollout_len=16",
];

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = add(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["pretrain", "train", "eval", "generate", "verify"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn bad_config_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = add(dir.path(), &["train", "--set", "diffusion.T=-5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diffusion.T"));
    assert_eq!(add(dir.path(), &["train", "--set", "no.such.key=1"]).status.code(), Some(1));
    assert_eq!(add(dir.path(), &["train", "--method", "magic"]).status.code(), Some(1));
}

#[test]
fn missing_checkpoint_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(add(dir.path(), &["eval"]).status.code(), Some(3));
    assert_eq!(add(dir.path(), &["generate", "--difficulty", "3"]).status.code(), Some(3));
    let cfg = dir.path().join("missing.cfg");
    assert_eq!(add(dir.path(), &["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn config_file_then_overrides_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small\nguidance.omega = 7.5\nseed = 9\n").unwrap();
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--seed", "4", "--method", "dr"];
    args.extend(TINY);
    let o = add(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("# effective config"));
    assert!(text.contains("guidance.omega = 7.5"));
    assert!(text.contains("seed = 4"));
    assert!(text.contains("train.method = dr"));
}

#[test]
fn train_then_eval_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let o = add(dir.path(), &[&["pretrain"][..], &TINY].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = add(dir.path(), &[&["train", "--workers", "2"][..], &TINY].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = add(dir.path(), &[&["eval"][..], &TINY].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean solved rate"));
    let o = add(dir.path(), &[&["generate", "--difficulty", "1", "--count", "4"][..], &TINY].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("difficulty 1: 4 envs"));
}
