use std::fmt;
use std::str::FromStr;

use crate::agent::PpoHyper;
use crate::diffcore::{Activation, AdamConfig, MlpSpec};
use crate::diffusion::NoiseSchedule;
use crate::envs::EnvFamily;
use crate::error::{Error, Result};
use crate::regret::{GuidanceConfig, GuidanceMode, ReturnSupport};
use crate::rng::fnv1a64;

/// How training environments are produced each epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Regret-guided diffusion sampling.
    Add,
    /// Domain randomization with the random maze generator.
    Dr,
    /// Diffusion sampling without guidance.
    Unguided,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Add => "add",
            Method::Dr => "dr",
            Method::Unguided => "unguided",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "add" => Ok(Method::Add),
            "dr" => Ok(Method::Dr),
            "unguided" => Ok(Method::Unguided),
            _ => Err(format!("unknown method `{s}` (expected add, dr or unguided)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub time_embed: usize,
    pub activation: Activation,
}

impl NetConfig {
    pub fn spec(&self, input: usize, output: usize) -> Result<MlpSpec> {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(self.hidden).take(self.depth));
        widths.push(output);
        MlpSpec::new(widths, self.activation, self.time_embed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// DDIM steps `T′` used when sampling.
    pub sample_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub minibatches: usize,
    pub buffer: usize,
    pub lr: f32,
    pub weight_decay: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportConfig {
    pub bins: usize,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub dataset_size: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    /// Decay of the weight average handed to sampling; 0 disables it.
    pub ema: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub method: Method,
    pub epochs: usize,
    /// Environments generated per epoch.
    pub batch_envs: usize,
    /// Evaluate on the test suite every this many epochs (0 disables).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

/// Every knob of a run. Each field has a flat dotted key, see
/// [`RunConfig::set`] and [`RunConfig::entries`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub env: EnvFamily,
    pub diffusion: DiffusionConfig,
    pub generator: NetConfig,
    pub critic: CriticConfig,
    pub support: SupportConfig,
    pub guidance: GuidanceSettings,
    pub pretrain: PretrainConfig,
    pub ppo: PpoHyper,
    pub train: TrainSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceSettings {
    pub omega: f64,
    pub alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            env: EnvFamily::new(7).expect("default grid"),
            diffusion: DiffusionConfig {
                steps: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
                sample_steps: 50,
            },
            generator: NetConfig {
                hidden: 256,
                depth: 2,
                time_embed: 32,
                activation: Activation::Relu,
            },
            critic: CriticConfig {
                net: NetConfig {
                    hidden: 128,
                    depth: 2,
                    time_embed: 32,
                    activation: Activation::Relu,
                },
                epochs: 5,
                minibatches: 128,
                buffer: 1600,
                lr: 1e-4,
                weight_decay: 0.0,
            },
            support: SupportConfig {
                bins: 100,
                v_min: 0.0,
                v_max: 1.0,
            },
            guidance: GuidanceSettings {
                omega: 5.0,
                alpha: 0.15,
            },
            pretrain: PretrainConfig {
                dataset_size: 10_000,
                steps: 3000,
                batch_size: 128,
                lr: 1e-4,
                weight_decay: 0.05,
                ema: 0.0,
            },
            ppo: PpoHyper::default(),
            train: TrainSettings {
                method: Method::Add,
                epochs: 200,
                batch_envs: 8,
                eval_every: 25,
                eval_episodes: 1,
                checkpoint_every: 25,
            },
        }
    }
}

enum Slot<'a> {
    Usize(&'a mut usize),
    U64(&'a mut u64),
    F64(&'a mut f64),
    F32(&'a mut f32),
    Act(&'a mut Activation),
    Method(&'a mut Method),
}

impl Slot<'_> {
    fn assign(self, key: &str, raw: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            raw.parse::<T>()
                .map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}")))
        }
        match self {
            Slot::Usize(x) => *x = parse(key, raw)?,
            Slot::U64(x) => *x = parse(key, raw)?,
            Slot::F64(x) => *x = parse(key, raw)?,
            Slot::F32(x) => *x = parse(key, raw)?,
            Slot::Act(x) => *x = parse(key, raw)?,
            Slot::Method(x) => *x = parse(key, raw)?,
        }
        Ok(())
    }

    fn render(&self) -> String {
        match self {
            Slot::Usize(x) => x.to_string(),
            Slot::U64(x) => x.to_string(),
            Slot::F64(x) => x.to_string(),
            Slot::F32(x) => x.to_string(),
            Slot::Act(x) => x.to_string(),
            Slot::Method(x) => x.to_string(),
        }
    }
}

impl RunConfig {
    fn slots(&mut self) -> Vec<(&'static str, Slot<'_>)> {
        use Slot::*;
        vec![
            ("seed", U64(&mut self.seed)),
            ("workers", Usize(&mut self.workers)),
            ("env.n", Usize(&mut self.env.n)),
            ("env.block_budget", Usize(&mut self.env.block_budget)),
            ("env.max_steps", Usize(&mut self.env.max_steps)),
            ("diffusion.T", Usize(&mut self.diffusion.steps)),
            ("diffusion.beta_start", F64(&mut self.diffusion.beta_start)),
            ("diffusion.beta_end", F64(&mut self.diffusion.beta_end)),
            ("diffusion.sample_steps", Usize(&mut self.diffusion.sample_steps)),
            ("generator.hidden", Usize(&mut self.generator.hidden)),
            ("generator.depth", Usize(&mut self.generator.depth)),
            ("generator.time_embed", Usize(&mut self.generator.time_embed)),
            ("generator.activation", Act(&mut self.generator.activation)),
            ("critic.hidden", Usize(&mut self.critic.net.hidden)),
            ("critic.depth", Usize(&mut self.critic.net.depth)),
            ("critic.time_embed", Usize(&mut self.critic.net.time_embed)),
            ("critic.activation", Act(&mut self.critic.net.activation)),
            ("critic.epochs", Usize(&mut self.critic.epochs)),
            ("critic.minibatches", Usize(&mut self.critic.minibatches)),
            ("critic.buffer", Usize(&mut self.critic.buffer)),
            ("critic.lr", F32(&mut self.critic.lr)),
            ("critic.weight_decay", F32(&mut self.critic.weight_decay)),
            ("support.bins", Usize(&mut self.support.bins)),
            ("support.v_min", F64(&mut self.support.v_min)),
            ("support.v_max", F64(&mut self.support.v_max)),
            ("guidance.omega", F64(&mut self.guidance.omega)),
            ("guidance.alpha", F64(&mut self.guidance.alpha)),
            ("pretrain.dataset_size", Usize(&mut self.pretrain.dataset_size)),
            ("pretrain.steps", Usize(&mut self.pretrain.steps)),
            ("pretrain.batch_size", Usize(&mut self.pretrain.batch_size)),
            ("pretrain.lr", F32(&mut self.pretrain.lr)),
            ("pretrain.weight_decay", F32(&mut self.pretrain.weight_decay)),
            ("pretrain.ema", F32(&mut self.pretrain.ema)),
            ("ppo.gamma", F64(&mut self.ppo.gamma)),
            ("ppo.lambda", F64(&mut self.ppo.lambda)),
            ("ppo.rollout_len", Usize(&mut self.ppo.rollout_len)),
            ("ppo.epochs", Usize(&mut self.ppo.epochs)),
            ("ppo.minibatches", Usize(&mut self.ppo.minibatches)),
            ("ppo.clip", F64(&mut self.ppo.clip)),
            ("ppo.ent_coef", F64(&mut self.ppo.ent_coef)),
            ("ppo.vf_coef", F64(&mut self.ppo.vf_coef)),
            ("ppo.max_grad_norm", F64(&mut self.ppo.max_grad_norm)),
            ("ppo.lr", F32(&mut self.ppo.lr)),
            ("ppo.hidden", Usize(&mut self.ppo.hidden)),
            ("train.method", Method(&mut self.train.method)),
            ("train.epochs", Usize(&mut self.train.epochs)),
            ("train.batch_envs", Usize(&mut self.train.batch_envs)),
            ("train.eval_every", Usize(&mut self.train.eval_every)),
            ("train.eval_episodes", Usize(&mut self.train.eval_episodes)),
            ("train.checkpoint_every", Usize(&mut self.train.checkpoint_every)),
        ]
    }

    /// All recognised keys, in echo order.
    pub fn keys() -> Vec<&'static str> {
        RunConfig::default().slots().into_iter().map(|(k, _)| k).collect()
    }

    /// Assigns one field from its textual value. Does not validate the
    /// combination; see [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let slot = self
            .slots()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::config(key, "unknown key"))?;
        slot.assign(key, raw.trim())
    }

    /// `(key, value)` pairs of the effective configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut copy = self.clone();
        copy.slots().into_iter().map(|(k, s)| (k, s.render())).collect()
    }

    /// `key = value` lines that parse back to this configuration.
    pub fn echo(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    fn hash_over(&self, keep: impl Fn(&str) -> bool) -> String {
        let text: String = self
            .entries()
            .into_iter()
            .filter(|(k, _)| keep(k))
            .map(|(k, v)| format!("{k}={v};"))
            .collect();
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }

    /// Hash of everything that shapes a run's trajectory. Leaves out the seed
    /// (appended separately), the worker count, and the epoch and checkpoint
    /// counts, so that extending a run resumes it.
    pub fn config_hash(&self) -> String {
        self.hash_over(|k| !matches!(k, "seed" | "workers" | "train.epochs" | "train.checkpoint_every"))
    }

    /// Hash of the keys that affect pre-training only, so that runs differing
    /// in later stages share one generator.
    pub fn pretrain_hash(&self) -> String {
        self.hash_over(|k| {
            k.starts_with("env.") || k.starts_with("diffusion.") || k.starts_with("generator.") || k.starts_with("pretrain.")
        })
    }

    pub fn run_name(&self) -> String {
        format!("{}-s{}", self.config_hash(), self.seed)
    }

    pub fn pretrain_name(&self) -> String {
        format!("pretrain-{}-s{}", self.pretrain_hash(), self.seed)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion.steps, self.diffusion.beta_start, self.diffusion.beta_end)
            .map_err(|e| Error::config("diffusion.T", e.to_string()))
    }

    pub fn return_support(&self) -> Result<ReturnSupport> {
        ReturnSupport::new(self.support.bins, self.support.v_min, self.support.v_max)
            .map_err(|e| Error::config("support.bins", e.to_string()))
    }

    pub fn generator_spec(&self) -> Result<MlpSpec> {
        let d = self.env.param_dim();
        self.generator
            .spec(d, d)
            .map_err(|e| Error::config("generator.hidden", e.to_string()))
    }

    pub fn critic_spec(&self) -> Result<MlpSpec> {
        self.critic
            .net
            .spec(self.env.param_dim(), self.support.bins)
            .map_err(|e| Error::config("critic.hidden", e.to_string()))
    }

    pub fn critic_optimizer(&self) -> AdamConfig {
        AdamConfig::adamw(self.critic.lr, self.critic.weight_decay)
    }

    pub fn guidance_config(&self, mode: GuidanceMode) -> GuidanceConfig {
        GuidanceConfig {
            omega: self.guidance.omega,
            alpha: self.guidance.alpha,
            mode,
        }
    }

    /// Checks every module contract the configuration feeds into.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("workers", self.workers)?;
        positive("env.n", self.env.n)?;
        positive("env.max_steps", self.env.max_steps)?;
        if self.env.n < 5 {
            return Err(Error::config("env.n", "the test suite needs N >= 5"));
        }
        if self.env.block_budget > self.env.n * self.env.n - 2 {
            return Err(Error::config("env.block_budget", "exceeds N² − 2"));
        }
        positive("diffusion.T", self.diffusion.steps)?;
        if !(self.diffusion.beta_start > 0.0) {
            return Err(Error::config("diffusion.beta_start", "must be positive"));
        }
        if !(self.diffusion.beta_end >= self.diffusion.beta_start && self.diffusion.beta_end < 1.0) {
            return Err(Error::config("diffusion.beta_end", "must lie in [beta_start, 1)"));
        }
        let sched = self.schedule()?;
        sched
            .strided_steps(self.diffusion.sample_steps)
            .map_err(|e| Error::config("diffusion.sample_steps", e.to_string()))?;
        for (key, v) in [
            ("generator.hidden", self.generator.hidden),
            ("critic.hidden", self.critic.net.hidden),
            ("generator.time_embed", self.generator.time_embed),
            ("critic.time_embed", self.critic.net.time_embed),
            ("critic.minibatches", self.critic.minibatches),
            ("critic.buffer", self.critic.buffer),
            ("pretrain.dataset_size", self.pretrain.dataset_size),
            ("pretrain.batch_size", self.pretrain.batch_size),
            ("train.batch_envs", self.train.batch_envs),
            ("train.eval_episodes", self.train.eval_episodes),
        ] {
            positive(key, v)?;
        }
        self.generator_spec()?;
        self.critic_spec()?;
        self.return_support()?;
        if !(self.pretrain.ema >= 0.0 && self.pretrain.ema < 1.0) {
            return Err(Error::config("pretrain.ema", "must lie in [0, 1)"));
        }
        if !(self.guidance.omega >= 0.0) {
            return Err(Error::config("guidance.omega", "must be >= 0"));
        }
        if !(self.guidance.alpha > 0.0 && self.guidance.alpha <= 1.0) {
            return Err(Error::config("guidance.alpha", "must lie in (0, 1]"));
        }
        for (key, lr) in [
            ("critic.lr", self.critic.lr),
            ("pretrain.lr", self.pretrain.lr),
        ] {
            if !(lr > 0.0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        self.ppo.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.set("guidance.omega", "15.0").unwrap();
        cfg.set("ppo.lr", "0.0003").unwrap();
        cfg.set("train.method", "dr").unwrap();
        let mut back = RunConfig::default();
        for line in cfg.echo().lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k.trim(), v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors_name_the_key() {
        let mut cfg = RunConfig::default();
        match cfg.set("diffusion.T", "-5") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "diffusion.T"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(cfg.set("no.such", "1"), Err(Error::Config { .. })));
        cfg.set("guidance.alpha", "0").unwrap();
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "guidance.alpha"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        assert_eq!(RunConfig::keys().len(), RunConfig::default().entries().len());
    }

    #[test]
    fn hashes_ignore_seed_and_workers() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 9;
        b.workers = 4;
        assert_eq!(a.config_hash(), b.config_hash());
        b.train.method = Method::Dr;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.pretrain_hash(), b.pretrain_hash());
    }
}
