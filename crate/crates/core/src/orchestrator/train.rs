use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::{Method, RunConfig};
use crate::agent::{collect, evaluate, ppo_update, EvalResult, PolicyModel, PpoOptimizers, ValueModel};
use crate::diffcore::{OptState, Tensor};
use crate::diffusion::{sample, train_generator, CountingSignal, Guidance, SampleOptions, ScoreModel, TrainConfig, TrainLog};
use crate::envs::{read_dataset, write_dataset, EnvMetrics, MazeEnv};
use crate::error::{Error, Result};
use crate::regret::{critic_update, BufferEntry, CriticBuffer, CriticGuidance, CriticModel, CriticTrainConfig, GuidanceMode};
use crate::rng::{derive_seed, Rng};

pub const METRICS_HEADER: &str =
    "epoch,method,seed,mean_regret,max_regret,mean_blocks,mean_shortest_path,solvable_frac,mean_return,eval_env,solved_rate";
pub const EVAL_HEADER: &str = "epoch,env,solved_rate,mean_return";

const GENERATOR_FILE: &str = "generator.ckpt";
const DATASET_FILE: &str = "dataset.bin";
const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const METRICS_FILE: &str = "metrics.csv";
const EVAL_FILE: &str = "eval.csv";
const CONFIG_FILE: &str = "config.txt";

/// Diffusion time at which the critic scores finished parameters.
const CLEAN_T: usize = 1;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Pre-training artifacts.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub generator: ScoreModel,
    pub dir: PathBuf,
    pub log: TrainLog,
}

/// Generates the random-maze dataset, trains the generator on it and stores
/// both under `dir`.
pub fn pretrain(cfg: &RunConfig, dir: &Path) -> Result<Pretrained> {
    cfg.validate()?;
    ensure_dir(dir)?;
    let family = cfg.env;
    let data = family.random_dataset(cfg.pretrain.dataset_size, derive_seed(cfg.seed, "pretrain.dataset"));
    write_dataset(&dir.join(DATASET_FILE), family.n, &data)?;
    let mut rng = Rng::new(derive_seed(cfg.seed, "pretrain.init"));
    let mut generator = ScoreModel::new(cfg.generator_spec()?, cfg.schedule()?, &mut rng)?;
    let tcfg = TrainConfig {
        steps: cfg.pretrain.steps,
        batch_size: cfg.pretrain.batch_size,
        optimizer: crate::diffcore::AdamConfig::adamw(cfg.pretrain.lr, cfg.pretrain.weight_decay),
        seed: derive_seed(cfg.seed, "pretrain.train"),
        log_every: 100,
        ema: (cfg.pretrain.ema > 0.0).then_some(cfg.pretrain.ema),
    };
    let start = Instant::now();
    let log = train_generator(&mut generator, &data, &tcfg)?;
    info!(
        "pretrained generator in {:.1}s, final loss {:?}",
        start.elapsed().as_secs_f64(),
        log.final_loss
    );
    let mut ck = Checkpoint::new(0);
    ck.insert_params("gen.", &generator.net.params);
    save_checkpoint(&dir.join(GENERATOR_FILE), &ck)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.echo())?;
    Ok(Pretrained {
        generator,
        dir: dir.to_path_buf(),
        log,
    })
}

pub fn load_generator(cfg: &RunConfig, path: &Path) -> Result<ScoreModel> {
    let ck = load_checkpoint(path)?;
    let mut generator = ScoreModel::new(cfg.generator_spec()?, cfg.schedule()?, &mut Rng::new(0))?;
    ck.load_params("gen.", &mut generator.net.params)
        .map_err(|e| e.context(path.display()))?;
    Ok(generator)
}

/// Reuses the generator under `out/pretrain-<hash>-s<seed>` or trains it.
pub fn load_or_pretrain(cfg: &RunConfig, out: &Path) -> Result<ScoreModel> {
    let dir = out.join(cfg.pretrain_name());
    let path = dir.join(GENERATOR_FILE);
    if path.exists() {
        info!("loading generator from {}", path.display());
        return load_generator(cfg, &path);
    }
    Ok(pretrain(cfg, &dir)?.generator)
}

/// The dataset written by [`pretrain`].
pub fn load_pretrain_dataset(cfg: &RunConfig, out: &Path) -> Result<Tensor> {
    Ok(read_dataset(&out.join(cfg.pretrain_name()).join(DATASET_FILE))?.1)
}

/// Everything that evolves during curriculum training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: RunConfig,
    pub generator: ScoreModel,
    pub critic: CriticModel,
    pub critic_opt: OptState,
    pub buffer: CriticBuffer,
    pub policy: PolicyModel,
    pub value: ValueModel,
    pub ppo_opt: PpoOptimizers,
    /// Completed epochs.
    pub epoch: usize,
    /// Guidance-gradient evaluations made by the sampler so far.
    pub guidance_calls: u64,
    /// Critic updates so far.
    pub critic_updates: u64,
}

impl TrainState {
    pub fn new(cfg: &RunConfig, generator: ScoreModel) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(derive_seed(cfg.seed, "critic.init"));
        let critic = CriticModel::new(cfg.critic_spec()?, cfg.return_support()?, cfg.schedule()?, &mut rng)?;
        let mut rng = Rng::new(derive_seed(cfg.seed, "agent.init"));
        let policy = PolicyModel::new(&cfg.ppo, &mut rng)?;
        let value = ValueModel::new(&cfg.ppo, &mut rng)?;
        Ok(TrainState {
            config: cfg.clone(),
            critic_opt: OptState::new(cfg.critic_optimizer(), &critic.net.params),
            buffer: CriticBuffer::new(cfg.critic.buffer)?,
            ppo_opt: PpoOptimizers::new(&cfg.ppo, &policy, &value),
            generator,
            critic,
            policy,
            value,
            epoch: 0,
            guidance_calls: 0,
            critic_updates: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.epoch as u64);
        ck.insert_params("gen.", &self.generator.net.params);
        ck.insert_params("critic.", &self.critic.net.params);
        ck.insert_params("policy.", &self.policy.net.params);
        ck.insert_params("value.", &self.value.net.params);
        ck.insert_optimizer("opt.critic.", &self.critic_opt);
        ck.insert_optimizer("opt.policy.", &self.ppo_opt.policy);
        ck.insert_optimizer("opt.value.", &self.ppo_opt.value);
        ck.insert_u64("meta.guidance_calls", self.guidance_calls);
        ck.insert_u64("meta.critic_updates", self.critic_updates);
        let d = self.config.env.param_dim();
        let m = self.config.support.bins;
        let n = self.buffer.len();
        let (mut thetas, mut targets) = (Vec::with_capacity(n * d), Vec::with_capacity(n * m));
        for e in self.buffer.entries() {
            thetas.extend_from_slice(&e.theta0);
            targets.extend_from_slice(&e.target);
        }
        ck.insert("buffer.theta0", Tensor::new(vec![n, d], thetas)?);
        ck.insert("buffer.target", Tensor::new(vec![n, m], targets)?);
        Ok(ck)
    }

    /// Rebuilds a state; fails without side effects if any tensor is missing
    /// or misshapen.
    pub fn from_checkpoint(cfg: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        let generator = ScoreModel::new(cfg.generator_spec()?, cfg.schedule()?, &mut Rng::new(0))?;
        let mut s = TrainState::new(cfg, generator)?;
        ck.load_params("gen.", &mut s.generator.net.params)?;
        ck.load_params("critic.", &mut s.critic.net.params)?;
        ck.load_params("policy.", &mut s.policy.net.params)?;
        ck.load_params("value.", &mut s.value.net.params)?;
        ck.load_optimizer("opt.critic.", &mut s.critic_opt)?;
        ck.load_optimizer("opt.policy.", &mut s.ppo_opt.policy)?;
        ck.load_optimizer("opt.value.", &mut s.ppo_opt.value)?;
        s.guidance_calls = ck.get_u64("meta.guidance_calls")?;
        s.critic_updates = ck.get_u64("meta.critic_updates")?;
        let thetas = ck.get("buffer.theta0")?;
        let targets = ck.get("buffer.target")?;
        let (d, m) = (cfg.env.param_dim(), cfg.support.bins);
        if thetas.shape().len() != 2 || thetas.shape()[1] != d || targets.shape() != [thetas.shape()[0], m] {
            return Err(Error::contract("checkpoint buffer has the wrong shape"));
        }
        for i in 0..thetas.shape()[0] {
            s.buffer.push_entry(BufferEntry {
                theta0: thetas.data()[i * d..(i + 1) * d].to_vec(),
                target: targets.data()[i * m..(i + 1) * m].to_vec(),
            });
        }
        s.epoch = ck.epoch as usize;
        Ok(s)
    }

    /// Produces `n` parameter rows with the configured method. `tag` names
    /// the random stream; add and unguided share it, so a constant critic
    /// makes them coincide.
    pub fn generate(&mut self, n: usize, tag: &str) -> Result<Tensor> {
        let cfg = &self.config;
        let d = cfg.env.param_dim();
        match cfg.train.method {
            Method::Dr => {
                let mut rng = Rng::new(derive_seed(cfg.seed, &format!("{tag}.dr")));
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    data.extend(cfg.env.random_param(&mut rng));
                }
                Tensor::matrix(n, d, data)
            }
            Method::Unguided | Method::Add => {
                let mut opts = SampleOptions::new(cfg.diffusion.sample_steps, n, derive_seed(cfg.seed, &format!("{tag}.sample")))
                    .clipped(0.0, 1.0);
                opts.workers = cfg.workers;
                if cfg.train.method == Method::Unguided {
                    return Ok(sample(&self.generator, None, &opts)?.0);
                }
                let signal = CriticGuidance {
                    critic: &self.critic,
                    alpha: cfg.guidance.alpha,
                    mode: GuidanceMode::Regret,
                };
                let counter = CountingSignal::new(&signal);
                let guidance = Guidance {
                    signal: &counter,
                    weight: cfg.guidance.omega as f32,
                };
                let out = sample(&self.generator, Some(guidance), &opts)?.0;
                self.guidance_calls += counter.calls() as u64;
                Ok(out)
            }
        }
    }
}

/// One row of the curriculum log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub method: Method,
    pub seed: u64,
    pub mean_regret: f64,
    pub max_regret: f64,
    pub mean_blocks: f64,
    /// Over solvable environments; `None` if there were none.
    pub mean_shortest_path: Option<f64>,
    pub solvable_frac: f64,
    pub mean_return: f64,
    /// Per test-environment results on evaluation epochs.
    pub eval: Vec<EvalResult>,
}

impl EpochRow {
    /// Mean solved rate over the test suite, on evaluation epochs.
    pub fn suite_solved_rate(&self) -> Option<f64> {
        (!self.eval.is_empty()).then(|| self.eval.iter().map(|r| r.solved_rate).sum::<f64>() / self.eval.len() as f64)
    }

    pub fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let (env, rate) = match self.suite_solved_rate() {
            Some(r) => ("suite".to_string(), r.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.method,
            self.seed,
            self.mean_regret,
            self.max_regret,
            self.mean_blocks,
            opt(self.mean_shortest_path),
            self.solvable_frac,
            self.mean_return,
            env,
            rate
        )
    }
}

/// Metrics of a decoded batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSummary {
    pub metrics: Vec<EnvMetrics>,
    pub mean_blocks: f64,
    pub mean_shortest_path: Option<f64>,
    pub solvable_frac: f64,
}

pub fn summarize(metrics: Vec<EnvMetrics>) -> BatchSummary {
    let n = metrics.len().max(1) as f64;
    let paths: Vec<f64> = metrics.iter().filter_map(|m| m.shortest_path.map(|p| p as f64)).collect();
    BatchSummary {
        mean_blocks: metrics.iter().map(|m| m.block_count as f64).sum::<f64>() / n,
        mean_shortest_path: (!paths.is_empty()).then(|| paths.iter().sum::<f64>() / paths.len() as f64),
        solvable_frac: paths.len() as f64 / n,
        metrics,
    }
}

/// One curriculum epoch: generate, filter, train the agent, train the critic.
pub fn train_epoch(state: &mut TrainState) -> Result<EpochRow> {
    let e = state.epoch;
    let cfg = state.config.clone();
    let seed = cfg.seed;
    let family = cfg.env;
    let b = cfg.train.batch_envs;
    let d = family.param_dim();
    let ctx = |err: Error| err.context(format!("epoch {e}"));
    let start = Instant::now();

    let mut theta = state.generate(b, &format!("epoch{e}")).map_err(ctx)?;
    let mut envs: Vec<MazeEnv> = (0..b)
        .map(|i| family.decode(theta.row(i)))
        .collect::<Result<_>>()
        .map_err(ctx)?;
    for attempt in 1..=3 {
        let bad: Vec<usize> = (0..b).filter(|&i| !envs[i].metrics().solvable).collect();
        if bad.is_empty() {
            break;
        }
        let fresh = state.generate(bad.len(), &format!("epoch{e}.retry{attempt}")).map_err(ctx)?;
        for (j, &i) in bad.iter().enumerate() {
            theta.data_mut()[i * d..(i + 1) * d].copy_from_slice(fresh.row(j));
            envs[i] = family.decode(fresh.row(j)).map_err(ctx)?;
        }
    }
    let summary = summarize(envs.iter().map(MazeEnv::metrics).collect());
    let regrets = state.critic.regrets(&theta, CLEAN_T, cfg.guidance.alpha).map_err(ctx)?;

    let mut rng = Rng::new(derive_seed(seed, &format!("epoch{e}.collect")));
    let batch = collect(&mut envs, &state.policy, &state.value, cfg.ppo.rollout_len, &mut rng).map_err(ctx)?;
    let mut rng = Rng::new(derive_seed(seed, &format!("epoch{e}.ppo")));
    let stats = ppo_update(&mut state.policy, &mut state.value, &batch, &cfg.ppo, &mut state.ppo_opt, &mut rng).map_err(ctx)?;

    let support = state.critic.support.clone();
    for i in 0..b {
        let returns = batch.returns_of(i);
        if returns.is_empty() {
            debug!("epoch {e}: env {i} finished no episode");
            continue;
        }
        state.buffer.push(theta.row(i).to_vec(), &returns, &support).map_err(ctx)?;
    }
    if !state.buffer.is_empty() {
        let ccfg = CriticTrainConfig {
            epochs: cfg.critic.epochs,
            minibatches: cfg.critic.minibatches,
            seed: derive_seed(seed, &format!("epoch{e}.critic")),
        };
        critic_update(&mut state.critic, &state.buffer, &ccfg, &mut state.critic_opt).map_err(ctx)?;
        state.critic_updates += 1;
    }

    let mean_return = if batch.episodes.is_empty() {
        0.0
    } else {
        batch.episodes.iter().map(|ep| ep.ret).sum::<f64>() / batch.episodes.len() as f64
    };
    let eval = if cfg.train.eval_every > 0 && (e + 1) % cfg.train.eval_every == 0 {
        let suite = family.test_suite().map_err(ctx)?;
        evaluate(&state.policy, &suite, cfg.train.eval_episodes, derive_seed(seed, &format!("epoch{e}.eval"))).map_err(ctx)?
    } else {
        Vec::new()
    };
    state.epoch += 1;
    let row = EpochRow {
        epoch: e,
        method: cfg.train.method,
        seed,
        mean_regret: regrets.iter().sum::<f64>() / regrets.len().max(1) as f64,
        max_regret: regrets.iter().copied().fold(0.0, f64::max),
        mean_blocks: summary.mean_blocks,
        mean_shortest_path: summary.mean_shortest_path,
        solvable_frac: summary.solvable_frac,
        mean_return,
        eval,
    };
    debug!(
        "epoch {e} [{}] {:.2}s return {:.3} blocks {:.1} path {:?} regret {:.4} entropy {:.3}",
        cfg.train.method,
        start.elapsed().as_secs_f64(),
        row.mean_return,
        row.mean_blocks,
        row.mean_shortest_path,
        row.mean_regret,
        stats.entropy
    );
    Ok(row)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Keeps the header and the rows whose leading epoch is below `epochs`.
fn truncate_csv(path: &Path, header: &str, epochs: usize) -> Result<()> {
    let text = if path.exists() {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    } else {
        String::new()
    };
    let mut out = format!("{header}\n");
    for line in text.lines().skip(1) {
        let keep = line
            .split(',')
            .next()
            .and_then(|x| x.parse::<usize>().ok())
            .is_some_and(|ep| ep < epochs);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    write_text(path, &out)
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    /// Rows produced by this invocation (resumed runs omit earlier ones).
    pub rows: Vec<EpochRow>,
    pub state: Option<TrainState>,
}

pub fn run_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    out.join(cfg.run_name())
}

pub fn checkpoint_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    run_dir(cfg, out).join(CHECKPOINT_FILE)
}

pub fn metrics_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    run_dir(cfg, out).join(METRICS_FILE)
}

/// Pre-trains (or reuses) the generator, then runs the epoch loop, resuming
/// from the run directory's checkpoint when present.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let generator = load_or_pretrain(cfg, out)?;
    run_with_generator(cfg, out, generator)
}

/// [`run`] with an already trained generator.
pub fn run_with_generator(cfg: &RunConfig, out: &Path, generator: ScoreModel) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = run_dir(cfg, out);
    if cfg.train.epochs == 0 {
        return Ok(RunSummary {
            dir,
            rows: Vec::new(),
            state: None,
        });
    }
    ensure_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.echo())?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    let mut state = if ck_path.exists() {
        let ck = load_checkpoint(&ck_path)?;
        let state = TrainState::from_checkpoint(cfg, &ck).map_err(|e| e.context(ck_path.display()))?;
        info!("resuming {} at epoch {}", dir.display(), state.epoch);
        state
    } else {
        TrainState::new(cfg, generator)?
    };
    truncate_csv(&dir.join(METRICS_FILE), METRICS_HEADER, state.epoch)?;
    truncate_csv(&dir.join(EVAL_FILE), EVAL_HEADER, state.epoch)?;
    let mut rows = Vec::new();
    while state.epoch < cfg.train.epochs {
        let row = train_epoch(&mut state)?;
        append_line(&dir.join(METRICS_FILE), &row.csv_line())?;
        for r in &row.eval {
            append_line(
                &dir.join(EVAL_FILE),
                &format!("{},{},{},{}", row.epoch, r.name, r.solved_rate, r.mean_return),
            )?;
        }
        if let Some(rate) = row.suite_solved_rate() {
            info!("epoch {}: suite solved rate {rate:.3}", row.epoch);
        }
        rows.push(row);
        let every = cfg.train.checkpoint_every;
        if state.epoch == cfg.train.epochs || (every > 0 && state.epoch % every == 0) {
            save_checkpoint(&ck_path, &state.to_checkpoint()?)?;
        }
    }
    Ok(RunSummary {
        dir,
        rows,
        state: Some(state),
    })
}

/// Loads the training state saved in the run directory of `cfg`.
pub fn load_state(cfg: &RunConfig, out: &Path) -> Result<TrainState> {
    let path = checkpoint_path(cfg, out);
    if !path.exists() {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no checkpoint; run `train` first"),
        ));
    }
    let ck = load_checkpoint(&path)?;
    TrainState::from_checkpoint(cfg, &ck).map_err(|e| e.context(path.display()))
}

/// Parsed row of a metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub method: String,
    pub seed: u64,
    pub mean_regret: f64,
    pub max_regret: f64,
    pub mean_blocks: f64,
    pub mean_shortest_path: Option<f64>,
    pub solvable_frac: f64,
    pub mean_return: f64,
    pub eval_env: Option<String>,
    pub solved_rate: Option<f64>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            offset: 0,
            msg: "unexpected metrics header".into(),
        });
    }
    let mut offset = METRICS_HEADER.len() + 1;
    let mut rows = Vec::new();
    for line in lines {
        let bad = |msg: &str| Error::Corrupt {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad("expected 11 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(LogRow {
            epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
            method: f[1].to_string(),
            seed: f[2].parse().map_err(|_| bad("bad seed"))?,
            mean_regret: num(f[3])?,
            max_regret: num(f[4])?,
            mean_blocks: num(f[5])?,
            mean_shortest_path: opt(f[6])?,
            solvable_frac: num(f[7])?,
            mean_return: num(f[8])?,
            eval_env: (!f[9].is_empty()).then(|| f[9].to_string()),
            solved_rate: opt(f[10])?,
        });
        offset += line.len() + 1;
    }
    Ok(rows)
}

/// Difficulty-conditioned samples and their decoded metrics.
#[derive(Clone, Debug)]
pub struct ControlReport {
    pub level: usize,
    pub theta: Tensor,
    pub summary: BatchSummary,
    /// False when the critic was never trained; the output is then close to
    /// unguided sampling.
    pub critic_trained: bool,
}

/// Samples `n` environments guided toward return bin `z_{M−k}`.
pub fn controllable_generate(
    generator: &ScoreModel,
    critic: &CriticModel,
    cfg: &RunConfig,
    level: usize,
    n: usize,
    seed: u64,
    critic_trained: bool,
) -> Result<ControlReport> {
    let signal = CriticGuidance {
        critic,
        alpha: cfg.guidance.alpha,
        mode: GuidanceMode::Difficulty(level),
    };
    cfg.guidance_config(GuidanceMode::Difficulty(level)).validate(critic.support.len())?;
    let guidance = Guidance {
        signal: &signal,
        weight: cfg.guidance.omega as f32,
    };
    let mut opts = SampleOptions::new(cfg.diffusion.sample_steps, n, seed).clipped(0.0, 1.0);
    opts.workers = cfg.workers;
    let (theta, _) = sample(generator, Some(guidance), &opts)?;
    let metrics = (0..n)
        .map(|i| cfg.env.decode(theta.row(i)).map(|e| e.metrics()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ControlReport {
        level,
        theta,
        summary: summarize(metrics),
        critic_trained,
    })
}
