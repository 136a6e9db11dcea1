//! Configuration files and subcommand dispatch for the `add` binary.
//!
//! Config files hold one `key = value` per line with `#` comments. The
//! effective configuration is built as defaults, then the file, then each
//! `--set key=value` in order, then the dedicated flags (`--seed`,
//! `--workers`, `--method`).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::agent::evaluate;
use crate::envs::write_dataset;
use crate::error::{Error, Result};
use crate::orchestrator::{
    controllable_generate, gradient_suite, load_state, pretrain, run, run_dir, verify_gaussian_guidance,
    verify_tv, RunConfig, TvOptions,
};
use crate::rng::derive_seed;

/// Splits config text into `(key, value)` pairs, in file order.
pub fn parse_config_text(text: &str, source: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(
                line,
                format!("{}:{}: expected `key = value`", source.display(), i + 1),
            )
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Defaults, then the optional file, then the overrides; validated.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in parse_config_text(&text, path)? {
            cfg.set(&k, &v)?;
        }
    }
    for o in overrides {
        let (k, v) = parse_override(o)?;
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(name = "add", about = "Regret-guided diffusion curricula for maze agents")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Root directory for all outputs.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_parser = ["add", "dr", "unguided"])]
    pub method: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the random-maze dataset and train the generator.
    Pretrain,
    /// Run (or resume) curriculum training.
    Train,
    /// Evaluate the trained policy on the test suite.
    Eval,
    /// Sample environments at a chosen difficulty level.
    Generate {
        /// Return bin index counted from the top: 1 is the easiest.
        #[arg(long)]
        difficulty: usize,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Run the guidance oracles and the gradient checks.
    Verify,
}

impl CommonArgs {
    pub fn config(&self) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(w) = self.workers {
            overrides.push(format!("workers={w}"));
        }
        if let Some(m) = &self.method {
            overrides.push(format!("train.method={m}"));
        }
        parse_config(self.config.as_deref(), &overrides)
    }
}

/// Parses `args`, runs the subcommand and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs the subcommand and returns its human-readable report.
pub fn dispatch(cli: &Cli) -> Result<String> {
    let cfg = cli.common.config()?;
    let out = &cli.common.out;
    let mut report = String::new();
    let _ = writeln!(report, "# effective config\n{}", cfg.echo());
    match &cli.command {
        Command::Pretrain => {
            let dir = out.join(cfg.pretrain_name());
            let p = pretrain(&cfg, &dir)?;
            let _ = writeln!(
                report,
                "generator trained in {} steps, final loss {:?}\nartifacts in {}",
                cfg.pretrain.steps,
                p.log.final_loss,
                dir.display()
            );
        }
        Command::Train => {
            let summary = run(&cfg, out)?;
            let _ = writeln!(report, "run directory {}", summary.dir.display());
            if let Some(last) = summary.rows.last() {
                let _ = writeln!(
                    report,
                    "epoch {}: return {:.3}, blocks {:.2}, shortest path {:?}, regret {:.4}",
                    last.epoch, last.mean_return, last.mean_blocks, last.mean_shortest_path, last.mean_regret
                );
            }
        }
        Command::Eval => {
            let state = load_state(&cfg, out)?;
            let suite = cfg.env.test_suite()?;
            let results = evaluate(&state.policy, &suite, cfg.train.eval_episodes, derive_seed(cfg.seed, "cli.eval"))?;
            let mut csv = String::from("env,solved_rate,mean_return\n");
            for r in &results {
                let _ = writeln!(report, "{:<12} solved {:.3} return {:.3}", r.name, r.solved_rate, r.mean_return);
                let _ = writeln!(csv, "{},{},{}", r.name, r.solved_rate, r.mean_return);
            }
            let mean = results.iter().map(|r| r.solved_rate).sum::<f64>() / results.len() as f64;
            let _ = writeln!(report, "mean solved rate {mean:.3} after {} epochs", state.epoch);
            let path = run_dir(&cfg, out).join("eval-final.csv");
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
        Command::Generate { difficulty, count } => {
            let state = load_state(&cfg, out)?;
            let seed = derive_seed(cfg.seed, "cli.generate");
            let r = controllable_generate(
                &state.generator,
                &state.critic,
                &cfg,
                *difficulty,
                *count,
                seed,
                state.critic_updates > 0,
            )?;
            if !r.critic_trained {
                log::warn!("critic was never trained; difficulty guidance is uninformative");
            }
            let _ = writeln!(
                report,
                "difficulty {}: {} envs, mean blocks {:.2}, mean shortest path {:?}, solvable {:.3}",
                difficulty, count, r.summary.mean_blocks, r.summary.mean_shortest_path, r.summary.solvable_frac
            );
            for i in 0..(*count).min(3) {
                let _ = writeln!(report, "{}\n", cfg.env.decode(r.theta.row(i))?);
            }
            let path = run_dir(&cfg, out).join(format!("generated-k{difficulty}.bin"));
            write_dataset(&path, cfg.env.n, &r.theta)?;
        }
        Command::Verify => {
            let mut failures = Vec::new();
            for omega in [0.0, 1.0, 2.0] {
                match verify_gaussian_guidance(omega, &[0.8, -0.5], 10_000, derive_seed(cfg.seed, "cli.verify.gauss")) {
                    Ok(r) => {
                        let _ = writeln!(
                            report,
                            "gaussian ω={omega}: mean error {:.4}, var error {:.4}  ok",
                            r.mean_error(),
                            r.var_error()
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(report, "gaussian ω={omega}: FAILED {e}");
                        failures.push(format!("gaussian ω={omega}"));
                    }
                }
            }
            let opts = TvOptions {
                seed: derive_seed(cfg.seed, "cli.verify.tv"),
                workers: cfg.workers,
                ..TvOptions::default()
            };
            let tv = verify_tv(50, 2.0, 100_000, &opts)?;
            let ok = tv.tv <= 0.15;
            let _ = writeln!(report, "tilted uniform ω=2: TV {:.4} (≤ 0.15)  {}", tv.tv, if ok { "ok" } else { "FAILED" });
            if !ok {
                failures.push("total variation".to_string());
            }
            for g in gradient_suite(20, derive_seed(cfg.seed, "cli.verify.grad"), 1e-3)? {
                let _ = writeln!(
                    report,
                    "gradients {:<18} {} instances, worst rel. error {:.2e}  {}",
                    g.name,
                    g.instances,
                    g.worst,
                    if g.passed() { "ok" } else { "FAILED" }
                );
                if !g.passed() {
                    failures.push(format!("gradients {}", g.name));
                }
            }
            let dir = run_dir(&cfg, out);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join("verify.txt");
            std::fs::write(&path, &report).map_err(|e| Error::io(&path, e))?;
            if !failures.is_empty() {
                print!("{report}");
                return Err(Error::Verification(failures.join(", ")));
            }
        }
    }
    info!("done");
    Ok(report)
}

/// Installs the `ADD_LOG`-controlled logger; defaults to `info`.
pub fn init_logging() {
    let env = env_logger::Env::default().filter_or("ADD_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
