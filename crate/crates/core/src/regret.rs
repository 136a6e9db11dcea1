//! Distributional environment critic and the regret / difficulty guidance
//! signals derived from it.
//!
//! The critic maps a noised environment parameter `θ_t` and its diffusion
//! time to logits over a fixed return support. Regret is estimated as the
//! upper-tail CVaR minus the mean of that categorical distribution.

use std::collections::VecDeque;

use crate::diffcore::{AdamConfig, Mlp, MlpSpec, OptState, Real, Tape, Tensor, Var};
use crate::diffusion::{forward_marginal, GuidanceSignal, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `M` bin centers `z_i = v_min + i/(M−1)·(v_max − v_min)` and the bin width
/// `Δ = (v_max − v_min)/M` used by the target projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnSupport {
    v_min: f64,
    v_max: f64,
    z: Vec<f64>,
    delta: f64,
}

impl ReturnSupport {
    pub fn new(m: usize, v_min: f64, v_max: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::contract(format!("support needs M >= 2, got {m}")));
        }
        if !(v_min < v_max) {
            return Err(Error::contract(format!(
                "support needs v_min < v_max, got [{v_min}, {v_max}]"
            )));
        }
        let span = v_max - v_min;
        let mut z: Vec<f64> = (0..m)
            .map(|i| v_min + i as f64 / (m - 1) as f64 * span)
            .collect();
        z[m - 1] = v_max;
        Ok(ReturnSupport {
            v_min,
            v_max,
            z,
            delta: span / m as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[f64] {
        &self.z
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.v_min, self.v_max)
    }

    fn points_as<T: Real>(&self) -> Vec<T> {
        self.z.iter().map(|&z| T::from_f64(z)).collect()
    }
}

/// Categorical distribution over a [`ReturnSupport`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnDistribution {
    pub probs: Vec<f64>,
}

impl ReturnDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "not a probability vector (sum {total})"
            )));
        }
        Ok(ReturnDistribution { probs })
    }

    pub fn point_mass(m: usize, i: usize) -> Self {
        let mut probs = vec![0.0; m];
        probs[i] = 1.0;
        ReturnDistribution { probs }
    }

    pub fn mean(&self, support: &ReturnSupport) -> f64 {
        self.probs.iter().zip(support.points()).map(|(p, z)| p * z).sum()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

/// Softmax of critic logits.
pub fn logits_to_distribution(logits: &[f32], support: &ReturnSupport) -> Result<ReturnDistribution> {
    if logits.len() != support.len() {
        return Err(Error::contract(format!(
            "{} logits for {} bins",
            logits.len(),
            support.len()
        )));
    }
    let l64: Vec<f64> = logits.iter().map(|&x| x as f64).collect();
    if l64.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("non-finite critic logits"));
    }
    Ok(ReturnDistribution {
        probs: crate::diffcore::softmax_slice(&l64),
    })
}

/// Target distribution from episodic returns.
///
/// Returns are clamped into the support bounds. Each support point gets raw
/// weight `(1/K) Σ_k [1 − |v_k − z_i|/Δ]` clamped to `[0, 1]`, and the
/// weights are renormalized. If every raw weight is zero, each return puts
/// mass `1/K` on its nearest support point (split equally on exact ties).
pub fn project_returns(returns: &[f64], support: &ReturnSupport) -> Result<ReturnDistribution> {
    if returns.is_empty() {
        return Err(Error::contract("cannot project an empty set of returns"));
    }
    let (lo, hi) = support.bounds();
    let k = returns.len() as f64;
    let clamped: Vec<f64> = returns
        .iter()
        .map(|&v| {
            if v.is_nan() {
                Err(Error::contract("NaN episodic return"))
            } else {
                Ok(v.clamp(lo, hi))
            }
        })
        .collect::<Result<_>>()?;
    let z = support.points();
    let mut w = vec![0.0f64; z.len()];
    for &v in &clamped {
        for (wi, &zi) in w.iter_mut().zip(z) {
            *wi += (1.0 - (v - zi).abs() / support.delta()).clamp(0.0, 1.0) / k;
        }
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
        return Ok(ReturnDistribution { probs: w });
    }
    let mut w = vec![0.0f64; z.len()];
    for &v in &clamped {
        let best = z.iter().map(|&zi| (v - zi).abs()).fold(f64::INFINITY, f64::min);
        let ties: Vec<usize> = (0..z.len())
            .filter(|&i| (v - z[i]).abs() <= best + 1e-12)
            .collect();
        for &i in &ties {
            w[i] += 1.0 / (k * ties.len() as f64);
        }
    }
    Ok(ReturnDistribution { probs: w })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::contract(format!("CVaR level {alpha} not in (0, 1]")));
    }
    Ok(())
}

/// Upper-tail CVaR at level `alpha`.
pub fn cvar(dist: &ReturnDistribution, support: &ReturnSupport, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(Tensor::vector(dist.probs.clone()));
    let c = tape.cvar_upper(p, support.points(), alpha)?;
    Ok(tape.value(c).item())
}

/// `CVaR_α − mean`.
pub fn regret_estimate(dist: &ReturnDistribution, support: &ReturnSupport, alpha: f64) -> Result<f64> {
    Ok(cvar(dist, support, alpha)? - dist.mean(support))
}

/// Records per-row regret `CVaR_α(p) − Σ p_i z_i` of probability rows `probs`.
pub fn regret_graph<T: Real>(
    tape: &mut Tape<T>,
    probs: Var,
    support: &ReturnSupport,
    alpha: f64,
) -> Result<Var> {
    check_alpha(alpha)?;
    let z = support.points_as::<T>();
    let tail = tape.cvar_upper(probs, &z, T::from_f64(alpha))?;
    let zv = tape.constant(Tensor::vector(z));
    let weighted = tape.mul_row(probs, zv)?;
    let mean = tape.sum_cols(weighted);
    tape.sub(tail, mean)
}

/// What the guidance signal pushes toward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GuidanceMode {
    /// Estimated regret (`CVaR_α − mean`).
    Regret,
    /// `log Pr(Z = z_{M−k})` for difficulty level `k ∈ 1..=M`.
    Difficulty(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub omega: f64,
    pub alpha: f64,
    pub mode: GuidanceMode,
}

impl GuidanceConfig {
    pub fn validate(&self, bins: usize) -> Result<()> {
        if !(self.omega >= 0.0) {
            return Err(Error::contract(format!("guidance weight {} < 0", self.omega)));
        }
        check_alpha(self.alpha)?;
        if let GuidanceMode::Difficulty(k) = self.mode {
            check_level(k, bins)?;
        }
        Ok(())
    }
}

fn check_level(k: usize, bins: usize) -> Result<()> {
    if k == 0 || k > bins {
        return Err(Error::contract(format!("difficulty level {k} outside 1..={bins}")));
    }
    Ok(())
}

/// Critic `τ_ψ(θ_t, t)` producing `M` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticModel {
    pub net: Mlp,
    pub support: ReturnSupport,
    pub schedule: NoiseSchedule,
}

impl CriticModel {
    pub fn new(spec: MlpSpec, support: ReturnSupport, schedule: NoiseSchedule, rng: &mut Rng) -> Result<Self> {
        Self::check_spec(&spec, &support)?;
        Ok(CriticModel {
            net: Mlp::init(spec, rng)?,
            support,
            schedule,
        })
    }

    /// Critic whose weights are all zero: constant uniform logits.
    pub fn constant(spec: MlpSpec, support: ReturnSupport, schedule: NoiseSchedule) -> Result<Self> {
        Self::check_spec(&spec, &support)?;
        Ok(CriticModel {
            net: Mlp::zeros(spec)?,
            support,
            schedule,
        })
    }

    fn check_spec(spec: &MlpSpec, support: &ReturnSupport) -> Result<()> {
        if spec.output_width() != support.len() {
            return Err(Error::contract(format!(
                "critic outputs {} logits for {} bins",
                spec.output_width(),
                support.len()
            )));
        }
        if spec.time_embed == 0 {
            return Err(Error::contract("critic needs a time embedding"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.net.spec.input_width()
    }

    /// Logits for every row of `theta_t` at diffusion time `t`.
    pub fn logits(&self, theta_t: &Tensor, t: usize) -> Result<Tensor> {
        self.schedule.check_t(t)?;
        let times = vec![t as f64; theta_t.rows()];
        self.net.predict(theta_t, Some(&times))
    }

    pub fn distributions(&self, theta_t: &Tensor, t: usize) -> Result<Vec<ReturnDistribution>> {
        let logits = self.logits(theta_t, t)?;
        (0..logits.rows())
            .map(|i| logits_to_distribution(logits.row(i), &self.support))
            .collect()
    }

    /// Estimated regret of each row.
    pub fn regrets(&self, theta_t: &Tensor, t: usize, alpha: f64) -> Result<Vec<f64>> {
        self.distributions(theta_t, t)?
            .iter()
            .map(|d| regret_estimate(d, &self.support, alpha))
            .collect()
    }
}

/// Records the summed per-row regret of the critic at `theta` on `tape`.
pub fn critic_regret_graph<T: Real>(
    tape: &mut Tape<T>,
    net: &Mlp<T>,
    params: &[Var],
    support: &ReturnSupport,
    theta: Var,
    times: &[f64],
    alpha: f64,
) -> Result<Var> {
    let logits = net.forward(tape, params, theta, Some(times))?;
    let probs = tape.softmax(logits);
    let regret = regret_graph(tape, probs, support, alpha)?;
    Ok(tape.sum(regret))
}

/// Records `Σ_rows log softmax(l)_{M−k}` on `tape`.
pub fn difficulty_graph<T: Real>(
    tape: &mut Tape<T>,
    net: &Mlp<T>,
    params: &[Var],
    theta: Var,
    times: &[f64],
    k: usize,
) -> Result<Var> {
    let logits = net.forward(tape, params, theta, Some(times))?;
    let m = tape.value(logits).cols();
    check_level(k, m)?;
    let logp = tape.log_softmax(logits);
    let rows = tape.value(logp).rows();
    let picked = tape.pick(logp, &vec![m - k; rows])?;
    Ok(tape.sum(picked))
}

fn input_gradient(
    model: &CriticModel,
    theta_t: &Tensor,
    t: usize,
    build: impl FnOnce(&mut Tape, &[Var], Var, &[f64]) -> Result<Var>,
) -> Result<Tensor> {
    model.schedule.check_t(t)?;
    if theta_t.cols() != model.dim() {
        return Err(Error::contract(format!(
            "critic input width {} vs θ width {}",
            model.dim(),
            theta_t.cols()
        )));
    }
    let mut tape = Tape::new();
    let params = model.net.params.bind(&mut tape);
    let x = tape.leaf(theta_t.clone());
    let times = vec![t as f64; theta_t.rows()];
    let out = build(&mut tape, &params, x, &times)?;
    let g = tape.backward(out)?.wrt(x);
    g.ensure_finite("guidance gradient")?;
    Ok(g)
}

/// `∇_{θ_t} Regret_t` for every row of `theta_t`.
pub fn regret_input_gradient(model: &CriticModel, theta_t: &Tensor, t: usize, alpha: f64) -> Result<Tensor> {
    input_gradient(model, theta_t, t, |tape, params, x, times| {
        critic_regret_graph(tape, &model.net, params, &model.support, x, times, alpha)
    })
}

/// `∇_{θ_t} log Pr(Z = z_{M−k})` for every row of `theta_t`.
pub fn difficulty_logprob_grad(model: &CriticModel, theta_t: &Tensor, t: usize, k: usize) -> Result<Tensor> {
    check_level(k, model.support.len())?;
    input_gradient(model, theta_t, t, |tape, params, x, times| {
        difficulty_graph(tape, &model.net, params, x, times, k)
    })
}

/// The critic as a diffusion guidance signal.
pub struct CriticGuidance<'a> {
    pub critic: &'a CriticModel,
    pub alpha: f64,
    pub mode: GuidanceMode,
}

impl GuidanceSignal for CriticGuidance<'_> {
    fn gradient(&self, theta_t: &Tensor, t: usize) -> Result<Tensor> {
        match self.mode {
            GuidanceMode::Regret => regret_input_gradient(self.critic, theta_t, t, self.alpha),
            GuidanceMode::Difficulty(k) => difficulty_logprob_grad(self.critic, theta_t, t, k),
        }
    }
}

/// Records `mean_b −Σ_i target_{b,i} log p_i(θ_t_b, t_b)`.
pub fn cross_entropy_graph<T: Real>(
    tape: &mut Tape<T>,
    net: &Mlp<T>,
    params: &[Var],
    theta_t: &Tensor<T>,
    times: &[f64],
    targets: &Tensor<T>,
) -> Result<Var> {
    let x = tape.constant(theta_t.clone());
    let logits = net.forward(tape, params, x, Some(times))?;
    let logp = tape.log_softmax(logits);
    let tv = tape.constant(targets.clone());
    let prod = tape.mul(tv, logp)?;
    let total = tape.sum(prod);
    let rows = theta_t.rows().max(1) as f64;
    Ok(tape.scale(total, T::from_f64(-1.0 / rows)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub theta0: Vec<f32>,
    /// Projected target probabilities, stored at training precision.
    pub target: Vec<f32>,
}

/// FIFO ring of `(θ0, target distribution)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticBuffer {
    capacity: usize,
    entries: VecDeque<BufferEntry>,
}

impl CriticBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::contract("critic buffer capacity must be positive"));
        }
        Ok(CriticBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    /// Stores an already projected target, evicting the oldest on overflow.
    pub fn push_entry(&mut self, entry: BufferEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Projects `returns` and stores the pair.
    pub fn push(&mut self, theta0: Vec<f32>, returns: &[f64], support: &ReturnSupport) -> Result<()> {
        let target = project_returns(returns, support)?;
        self.push_entry(BufferEntry {
            theta0,
            target: target.probs.iter().map(|&p| p as f32).collect(),
        });
        Ok(())
    }

    /// `n` entries drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<&BufferEntry>> {
        if self.entries.is_empty() {
            return Err(Error::contract("cannot sample from an empty critic buffer"));
        }
        Ok((0..n).map(|_| &self.entries[rng.below(self.entries.len())]).collect())
    }
}

#[derive(Clone, Debug)]
pub struct CriticTrainConfig {
    pub epochs: usize,
    pub minibatches: usize,
    pub seed: u64,
}

/// Cross-entropy training of the critic on noised buffer samples.
///
/// Every epoch draws `buffer.len()` entries with replacement and splits them
/// into `minibatches` optimizer steps. Each entry is noised to a uniformly
/// drawn `t ∈ 1..=T`. Returns the mean loss of each epoch.
pub fn critic_update(
    model: &mut CriticModel,
    buffer: &CriticBuffer,
    cfg: &CriticTrainConfig,
    opt: &mut OptState,
) -> Result<Vec<f32>> {
    if buffer.is_empty() {
        return Err(Error::contract("critic update needs a non-empty buffer"));
    }
    let mut rng = Rng::new(cfg.seed);
    let d = model.dim();
    let m = model.support.len();
    let big_t = model.schedule.steps();
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let picks = buffer.sample(buffer.len(), &mut rng)?;
        let per = picks.len().div_ceil(cfg.minibatches.max(1)).max(1);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in picks.chunks(per) {
            let mut noised = Vec::with_capacity(chunk.len() * d);
            let mut targets = Vec::with_capacity(chunk.len() * m);
            let mut times = Vec::with_capacity(chunk.len());
            for e in chunk {
                if e.theta0.len() != d || e.target.len() != m {
                    return Err(Error::contract("critic buffer entry has the wrong width"));
                }
                let t = 1 + rng.below(big_t);
                let theta0 = Tensor::vector(e.theta0.clone());
                let eps = Tensor::vector(rng.normal_vec(d));
                noised.extend_from_slice(forward_marginal(&theta0, t, &eps, &model.schedule)?.data());
                targets.extend_from_slice(&e.target);
                times.push(t as f64);
            }
            let rows = chunk.len();
            let theta_t = Tensor::matrix(rows, d, noised)?;
            let targets = Tensor::matrix(rows, m, targets)?;
            let mut tape = Tape::new();
            let params = model.net.params.bind(&mut tape);
            let loss = cross_entropy_graph(&mut tape, &model.net, &params, &theta_t, &times, &targets)?;
            epoch_loss += tape.value(loss).item() as f64;
            batches += 1;
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p)).collect();
            opt.step(&mut model.net.params, &grads)?;
        }
        log.push((epoch_loss / batches.max(1) as f64) as f32);
    }
    Ok(log)
}

/// Default critic optimizer (AdamW, matching the generator's settings).
pub fn default_critic_optimizer() -> AdamConfig {
    AdamConfig::adamw(1e-4, 0.05)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Activation;

    fn three_point() -> (ReturnSupport, ReturnDistribution) {
        let s = ReturnSupport::new(3, 0.0, 1.0).unwrap();
        let d = ReturnDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        (s, d)
    }

    #[test]
    fn support_definitions() {
        let s = ReturnSupport::new(4, 0.0, 1.0).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in s.points().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s.delta(), 0.25);
        let s2 = ReturnSupport::new(2, 0.0, 1.0).unwrap();
        assert_eq!(s2.points(), &[0.0, 1.0]);
        assert_eq!(s2.delta(), 0.5);
        assert!(ReturnSupport::new(1, 0.0, 1.0).is_err());
        assert!(ReturnSupport::new(4, 1.0, 1.0).is_err());
    }

    #[test]
    fn softmax_cases() {
        let s = ReturnSupport::new(4, 0.0, 1.0).unwrap();
        let u = logits_to_distribution(&[0.0; 4], &s).unwrap();
        assert!(u.probs.iter().all(|&p| (p - 0.25).abs() < 1e-12));
        let peaked = logits_to_distribution(&[10.0, 0.0, 0.0, 0.0], &s).unwrap();
        let expect = 10f64.exp() / (10f64.exp() + 3.0);
        assert!((peaked.probs[0] - expect).abs() < 1e-9);
        let a = logits_to_distribution(&[0.3, -1.0, 2.0, 0.5], &s).unwrap();
        let b = logits_to_distribution(&[7.3, 6.0, 9.0, 7.5], &s).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_examples() {
        let s4 = ReturnSupport::new(4, 0.0, 1.0).unwrap();
        assert_eq!(project_returns(&[0.0], &s4).unwrap().probs, vec![1.0, 0.0, 0.0, 0.0]);
        let s2 = ReturnSupport::new(2, 0.0, 1.0).unwrap();
        assert_eq!(project_returns(&[0.25], &s2).unwrap().probs, vec![1.0, 0.0]);
        assert_eq!(project_returns(&[0.5], &s2).unwrap().probs, vec![0.5, 0.5]);
        assert!(project_returns(&[], &s2).is_err());
        // Out-of-range returns are clamped, not dropped.
        assert_eq!(project_returns(&[3.0], &s4).unwrap().probs, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cvar_examples() {
        let (s, d) = three_point();
        assert!((cvar(&d, &s, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((cvar(&d, &s, 0.8).unwrap() - 0.8125).abs() < 1e-12);
        assert!((cvar(&d, &s, 1.0).unwrap() - 0.65).abs() < 1e-12);
        assert!(cvar(&d, &s, 0.0).is_err());
        assert!(cvar(&d, &s, 1.5).is_err());
    }

    #[test]
    fn regret_examples() {
        let (s, d) = three_point();
        assert!((regret_estimate(&d, &s, 0.5).unwrap() - 0.35).abs() < 1e-12);
        for i in 0..3 {
            let pm = ReturnDistribution::point_mass(3, i);
            for alpha in [0.05, 0.15, 0.5, 1.0] {
                assert!(regret_estimate(&pm, &s, alpha).unwrap().abs() < 1e-12);
            }
        }
        let s2 = ReturnSupport::new(2, 0.0, 1.0).unwrap();
        let u = ReturnDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!((regret_estimate(&u, &s2, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    fn small_critic(rng: &mut Rng) -> CriticModel {
        let spec = MlpSpec::new(vec![3, 8, 5], Activation::Tanh, 4).unwrap();
        let support = ReturnSupport::new(5, 0.0, 1.0).unwrap();
        let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        CriticModel::new(spec, support, sched, rng).unwrap()
    }

    #[test]
    fn constant_critic_has_zero_gradients() {
        let spec = MlpSpec::new(vec![3, 8, 5], Activation::Relu, 4).unwrap();
        let support = ReturnSupport::new(5, 0.0, 1.0).unwrap();
        let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let critic = CriticModel::constant(spec, support, sched).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.5, -0.3, 1.0, 0.0, 0.2]).unwrap();
        assert_eq!(regret_input_gradient(&critic, &x, 10, 0.15).unwrap(), Tensor::zeros(&[2, 3]));
        assert_eq!(difficulty_logprob_grad(&critic, &x, 10, 2).unwrap(), Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn difficulty_level_is_range_checked() {
        let mut rng = Rng::new(0);
        let critic = small_critic(&mut rng);
        let x = Tensor::matrix(1, 3, vec![0.1, 0.5, -0.3]).unwrap();
        assert!(difficulty_logprob_grad(&critic, &x, 10, 0).is_err());
        assert!(difficulty_logprob_grad(&critic, &x, 10, 6).is_err());
        assert!(difficulty_logprob_grad(&critic, &x, 10, 5).is_ok());
    }

    #[test]
    fn logit_shift_leaves_guidance_unchanged() {
        let mut rng = Rng::new(4);
        let critic = small_critic(&mut rng);
        let mut shifted = critic.clone();
        let last = shifted.net.params.len() - 1;
        shifted
            .net
            .params
            .tensors_mut()
            .nth(last)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|b| *b += 3.0);
        let x = Tensor::matrix(2, 3, vec![0.4, -0.2, 0.9, 0.0, 0.3, -0.7]).unwrap();
        let a = regret_input_gradient(&critic, &x, 20, 0.3).unwrap();
        let b = regret_input_gradient(&shifted, &x, 20, 0.3).unwrap();
        let c = difficulty_logprob_grad(&critic, &x, 20, 2).unwrap();
        let d = difficulty_logprob_grad(&shifted, &x, 20, 2).unwrap();
        for (p, q) in a.data().iter().zip(b.data()).chain(c.data().iter().zip(d.data())) {
            assert!((p - q).abs() < 1e-5, "{p} vs {q}");
        }
    }

    #[test]
    fn buffer_fifo_and_sampling() {
        let s = ReturnSupport::new(4, 0.0, 1.0).unwrap();
        let mut b = CriticBuffer::new(2).unwrap();
        let mut rng = Rng::new(1);
        assert!(b.sample(1, &mut rng).is_err());
        b.push(vec![1.0], &[0.0], &s).unwrap();
        b.push(vec![2.0], &[1.0], &s).unwrap();
        b.push(vec![3.0], &[0.5], &s).unwrap();
        let kept: Vec<f32> = b.entries().map(|e| e.theta0[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
        assert!(b.sample(0, &mut rng).unwrap().is_empty());
        assert!(CriticBuffer::new(0).is_err());
    }

    #[test]
    fn buffer_sampling_is_uniform() {
        let s = ReturnSupport::new(4, 0.0, 1.0).unwrap();
        let mut b = CriticBuffer::new(3).unwrap();
        for i in 0..3 {
            b.push(vec![i as f32], &[0.0], &s).unwrap();
        }
        let mut rng = Rng::new(11);
        let mut counts = [0usize; 3];
        for e in b.sample(100_000, &mut rng).unwrap() {
            counts[e.theta0[0] as usize] += 1;
        }
        for c in counts {
            let frac = c as f64 / 100_000.0;
            assert!((frac - 1.0 / 3.0).abs() < 0.02 / 3.0, "{counts:?}");
        }
    }

    #[test]
    fn zero_epochs_leave_critic_unchanged() {
        let mut rng = Rng::new(2);
        let mut critic = small_critic(&mut rng);
        let before = critic.clone();
        let mut buffer = CriticBuffer::new(4).unwrap();
        buffer.push(vec![0.1, 0.2, 0.3], &[0.5], &critic.support).unwrap();
        let mut opt = OptState::new(AdamConfig::adam(1e-3), &critic.net.params);
        let cfg = CriticTrainConfig {
            epochs: 0,
            minibatches: 1,
            seed: 0,
        };
        critic_update(&mut critic, &buffer, &cfg, &mut opt).unwrap();
        assert_eq!(critic, before);
        let empty = CriticBuffer::new(4).unwrap();
        assert!(critic_update(&mut critic, &empty, &cfg, &mut opt).is_err());
    }
}
