//! PPO with generalized advantage estimation over maze environments.

use crate::diffcore::{
    clip_grad_norm, softmax_slice, Activation, AdamConfig, Mlp, MlpSpec, OptState, Real, Tape, Tensor, Var,
};
use crate::envs::{obs_dim, Action, MazeEnv, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PpoHyper {
    pub gamma: f64,
    pub lambda: f64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub lr: f32,
    pub hidden: usize,
}

impl Default for PpoHyper {
    fn default() -> Self {
        PpoHyper {
            gamma: 0.995,
            lambda: 0.95,
            rollout_len: 128,
            epochs: 5,
            minibatches: 4,
            clip: 0.2,
            ent_coef: 0.0,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            lr: 1e-4,
            hidden: 64,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("ppo.gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("ppo.lambda", "must lie in [0, 1]"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("ppo.clip", "must be positive"));
        }
        if self.rollout_len == 0 {
            return Err(Error::config("ppo.rollout_len", "must be positive"));
        }
        if self.minibatches == 0 {
            return Err(Error::config("ppo.minibatches", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("ppo.lr", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("ppo.hidden", "must be positive"));
        }
        Ok(())
    }

    /// Adam with the `eps = 1e-5` customary for PPO.
    pub fn optimizer(&self) -> AdamConfig {
        AdamConfig::adam(self.lr).with_eps(1e-5)
    }

    fn spec(&self, out: usize) -> MlpSpec {
        MlpSpec::new(vec![obs_dim(), self.hidden, self.hidden, out], Activation::Tanh, 0)
            .expect("widths are positive")
    }
}

/// Categorical policy over the three maze actions.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub net: Mlp,
}

impl PolicyModel {
    pub fn new(hyper: &PpoHyper, rng: &mut Rng) -> Result<Self> {
        Ok(PolicyModel {
            net: Mlp::init(hyper.spec(NUM_ACTIONS), rng)?,
        })
    }

    pub fn logits(&self, obs: &Tensor) -> Result<Tensor> {
        self.net.predict(obs, None)
    }

    /// Action probabilities for one observation.
    pub fn probs(&self, obs: &[f32]) -> Result<Vec<f32>> {
        let logits = self.logits(&Tensor::matrix(1, obs.len(), obs.to_vec())?)?;
        Ok(softmax_slice(logits.row(0)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueModel {
    pub net: Mlp,
}

impl ValueModel {
    pub fn new(hyper: &PpoHyper, rng: &mut Rng) -> Result<Self> {
        Ok(ValueModel {
            net: Mlp::init(hyper.spec(1), rng)?,
        })
    }

    pub fn values(&self, obs: &Tensor) -> Result<Vec<f32>> {
        let v = self.net.predict(obs, None)?;
        v.ensure_finite("value prediction")?;
        Ok(v.into_data())
    }
}

/// A finished episode inside a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub env_id: usize,
    /// Undiscounted sum of rewards.
    pub ret: f64,
    pub steps: usize,
}

/// Transitions stored time-major: entry `s·E + e` is step `s` of env `e`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RolloutBatch {
    pub num_envs: usize,
    pub steps: usize,
    pub obs: Vec<f32>,
    pub actions: Vec<usize>,
    pub logp: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub values: Vec<f32>,
    /// Value of each env's observation after the last step.
    pub bootstrap: Vec<f32>,
    pub episodes: Vec<EpisodeRecord>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Episodic returns of env `id`, in completion order.
    pub fn returns_of(&self, id: usize) -> Vec<f64> {
        self.episodes.iter().filter(|e| e.env_id == id).map(|e| e.ret).collect()
    }
}

fn stack_obs(envs: &[MazeEnv]) -> Result<Tensor> {
    let d = obs_dim();
    let mut data = vec![0.0f32; envs.len() * d];
    for (env, row) in envs.iter().zip(data.chunks_mut(d)) {
        env.write_observation(row);
    }
    Tensor::matrix(envs.len(), d, data)
}

/// Resets every env and runs `steps` synchronized steps with actions sampled
/// from the policy. Finished episodes are reset in place.
pub fn collect(
    envs: &mut [MazeEnv],
    policy: &PolicyModel,
    value: &ValueModel,
    steps: usize,
    rng: &mut Rng,
) -> Result<RolloutBatch> {
    let e = envs.len();
    let d = obs_dim();
    let mut batch = RolloutBatch {
        num_envs: e,
        steps,
        ..Default::default()
    };
    for env in envs.iter_mut() {
        env.reset();
    }
    if steps == 0 || e == 0 {
        return Ok(batch);
    }
    let mut running = vec![0.0f64; e];
    batch.obs.reserve(steps * e * d);
    for _ in 0..steps {
        let obs = stack_obs(envs)?;
        let logits = policy.logits(&obs)?;
        logits.ensure_finite("policy logits")?;
        let values = value.values(&obs)?;
        batch.obs.extend_from_slice(obs.data());
        for (i, env) in envs.iter_mut().enumerate() {
            let row = logits.row(i);
            let probs = softmax_slice(row);
            let a = rng.categorical(&probs);
            let lse = crate::diffcore::logsumexp_slice(row);
            let out = env.step(Action::from_index(a)?)?;
            running[i] += out.reward as f64;
            if out.done {
                batch.episodes.push(EpisodeRecord {
                    env_id: i,
                    ret: running[i],
                    steps: env.steps(),
                });
                running[i] = 0.0;
                env.reset();
            }
            batch.actions.push(a);
            batch.logp.push(row[a] - lse);
            batch.rewards.push(out.reward);
            batch.dones.push(out.done);
            batch.values.push(values[i]);
        }
    }
    batch.bootstrap = value.values(&stack_obs(envs)?)?;
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Generalized advantage estimation with per-batch normalization.
pub fn gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Advantages {
    let e = batch.num_envs;
    let n = batch.len();
    let mut raw = vec![0.0f64; n];
    for env in 0..e {
        let mut next_adv = 0.0f64;
        let mut next_value = batch.bootstrap.get(env).copied().unwrap_or(0.0) as f64;
        for s in (0..batch.steps).rev() {
            let i = s * e + env;
            let live = if batch.dones[i] { 0.0 } else { 1.0 };
            let v = batch.values[i] as f64;
            let delta = batch.rewards[i] as f64 + gamma * next_value * live - v;
            next_adv = delta + gamma * lambda * live * next_adv;
            raw[i] = next_adv;
            next_value = v;
        }
    }
    let targets = raw.iter().zip(&batch.values).map(|(a, &v)| a + v as f64).collect();
    Advantages {
        normalized: normalize(&raw),
        raw,
        targets,
    }
}

/// Shifts to mean 0 and scales to unit (population) standard deviation.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / std).collect()
}

/// Minibatch inputs to the PPO loss.
#[derive(Clone, Debug)]
pub struct PpoInputs<T: Real = f32> {
    pub obs: Tensor<T>,
    pub actions: Vec<usize>,
    pub old_logp: Vec<T>,
    pub advantages: Vec<T>,
    pub targets: Vec<T>,
}

/// Loss nodes recorded by [`ppo_loss_graph`].
#[derive(Clone, Copy, Debug)]
pub struct PpoLossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
}

/// Records the clipped surrogate, squared-error value loss and entropy.
/// `total = policy + vf·value − ent·entropy`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss_graph<T: Real>(
    tape: &mut Tape<T>,
    policy: &Mlp<T>,
    policy_params: &[Var],
    value: &Mlp<T>,
    value_params: &[Var],
    inputs: &PpoInputs<T>,
    clip: f64,
    vf_coef: f64,
    ent_coef: f64,
) -> Result<PpoLossVars> {
    let rows = inputs.actions.len();
    if inputs.obs.rows() != rows
        || inputs.old_logp.len() != rows
        || inputs.advantages.len() != rows
        || inputs.targets.len() != rows
    {
        return Err(Error::contract("PPO minibatch fields disagree in length"));
    }
    let x = tape.constant(inputs.obs.clone());
    let logits = policy.forward(tape, policy_params, x, None)?;
    let logp_all = tape.log_softmax(logits);
    let logp = tape.pick(logp_all, &inputs.actions)?;
    let old = tape.constant(Tensor::vector(inputs.old_logp.clone()));
    let diff = tape.sub(logp, old)?;
    let ratio = tape.exp(diff);
    let adv = tape.constant(Tensor::vector(inputs.advantages.clone()));
    let s1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, T::from_f64(1.0 - clip), T::from_f64(1.0 + clip));
    let s2 = tape.mul(clipped, adv)?;
    let surr = tape.minimum(s1, s2)?;
    let surr_mean = tape.mean(surr);
    let policy_loss = tape.scale(surr_mean, T::from_f64(-1.0));

    let v = value.forward(tape, value_params, x, None)?;
    let v = tape.reshape(v, &[rows])?;
    let targets = tape.constant(Tensor::vector(inputs.targets.clone()));
    let err = tape.sub(v, targets)?;
    let sq = tape.square(err);
    let value_loss = tape.mean(sq);

    let probs = tape.softmax(logits);
    let plogp = tape.mul(probs, logp_all)?;
    let neg_ent = tape.sum_cols(plogp);
    let neg_ent_mean = tape.mean(neg_ent);
    let entropy = tape.scale(neg_ent_mean, T::from_f64(-1.0));

    let weighted_v = tape.scale(value_loss, T::from_f64(vf_coef));
    let total = tape.add(policy_loss, weighted_v)?;
    let weighted_e = tape.scale(entropy, T::from_f64(ent_coef));
    let total = tape.sub(total, weighted_e)?;
    Ok(PpoLossVars {
        total,
        policy: policy_loss,
        value: value_loss,
        entropy,
    })
}

/// Optimizer state for both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoOptimizers {
    pub policy: OptState,
    pub value: OptState,
}

impl PpoOptimizers {
    pub fn new(hyper: &PpoHyper, policy: &PolicyModel, value: &ValueModel) -> Self {
        PpoOptimizers {
            policy: OptState::new(hyper.optimizer(), &policy.net.params),
            value: OptState::new(hyper.optimizer(), &value.net.params),
        }
    }
}

/// Means over all minibatch steps of an update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub updates: usize,
}

/// Runs `hyper.epochs` passes of shuffled minibatch steps over `batch`.
pub fn ppo_update(
    policy: &mut PolicyModel,
    value: &mut ValueModel,
    batch: &RolloutBatch,
    hyper: &PpoHyper,
    opt: &mut PpoOptimizers,
    rng: &mut Rng,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::contract("PPO update on an empty batch"));
    }
    let adv = gae(batch, hyper.gamma, hyper.lambda);
    let d = obs_dim();
    let n = batch.len();
    let per = n.div_ceil(hyper.minibatches).max(1);
    let mut stats = PpoStats::default();
    let mut order: Vec<usize> = (0..n).collect();
    let np = policy.net.params.len();
    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(per) {
            let mut obs = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                obs.extend_from_slice(&batch.obs[i * d..(i + 1) * d]);
            }
            let inputs = PpoInputs {
                obs: Tensor::matrix(chunk.len(), d, obs)?,
                actions: chunk.iter().map(|&i| batch.actions[i]).collect(),
                old_logp: chunk.iter().map(|&i| batch.logp[i]).collect(),
                advantages: chunk.iter().map(|&i| adv.normalized[i] as f32).collect(),
                targets: chunk.iter().map(|&i| adv.targets[i] as f32).collect(),
            };
            let mut tape = Tape::new();
            let pp = policy.net.params.bind(&mut tape);
            let vp = value.net.params.bind(&mut tape);
            let vars = ppo_loss_graph(
                &mut tape,
                &policy.net,
                &pp,
                &value.net,
                &vp,
                &inputs,
                hyper.clip,
                hyper.vf_coef,
                hyper.ent_coef,
            )?;
            stats.policy_loss += tape.value(vars.policy).item() as f64;
            stats.value_loss += tape.value(vars.value).item() as f64;
            stats.entropy += tape.value(vars.entropy).item() as f64;
            let g = tape.backward(vars.total)?;
            let mut grads: Vec<Tensor> = pp.iter().chain(&vp).map(|&v| g.wrt(v)).collect();
            stats.grad_norm += clip_grad_norm(&mut grads, hyper.max_grad_norm);
            let (gp, gv) = grads.split_at(np);
            opt.policy.step(&mut policy.net.params, gp)?;
            opt.value.step(&mut value.net.params, gv)?;
            stats.updates += 1;
        }
    }
    if stats.updates > 0 {
        let k = stats.updates as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.grad_norm /= k;
    }
    Ok(stats)
}

/// Greedy-policy results on one evaluation env.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub name: String,
    pub solved_rate: f64,
    pub mean_return: f64,
}

/// Greedy rollouts (argmax of the logits, lowest index on ties). The seed only
/// matters through tie-breaking, which is deterministic.
pub fn evaluate(
    policy: &PolicyModel,
    envs: &[(String, MazeEnv)],
    episodes: usize,
    _seed: u64,
) -> Result<Vec<EvalResult>> {
    if episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    envs.iter()
        .map(|(name, env)| {
            let mut env = env.clone();
            let mut solved = 0usize;
            let mut total = 0.0f64;
            for _ in 0..episodes {
                let mut obs = env.reset();
                let mut ret = 0.0f64;
                loop {
                    let logits = policy.logits(&Tensor::matrix(1, obs.len(), obs)?)?;
                    let row = logits.row(0);
                    let a = (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best });
                    let out = env.step(Action::from_index(a)?)?;
                    ret += out.reward as f64;
                    obs = out.observation;
                    if out.done {
                        break;
                    }
                }
                if ret > 0.0 {
                    solved += 1;
                }
                total += ret;
            }
            Ok(EvalResult {
                name: name.clone(),
                solved_rate: solved as f64 / episodes as f64,
                mean_return: total / episodes as f64,
            })
        })
        .collect()
}
