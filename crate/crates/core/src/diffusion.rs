//! Variance-preserving diffusion over flat parameter vectors.
//!
//! Time is discrete, `t ∈ 1..=T`, with `alpha_bar(0) = 1`. The generator is
//! an ε-prediction network; its score is `−ε/√(1−ᾱ_t)`. Sampling runs DDIM
//! over a uniformly strided subsequence of timesteps, optionally shifting ε
//! by a guidance gradient at every step.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::diffcore::{AdamConfig, Mlp, MlpSpec, OptState, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Linear β schedule and its cumulative products.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `steps` values of β linearly spaced over `[beta_start, beta_end]`
    /// (endpoints included).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::contract(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::contract(format!(
                "schedule needs 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// β_t for `t ∈ 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t ∈ 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::contract(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Uniform stride subsequence `T, T−k, .., k` with `k = T / t_prime`.
    pub fn strided_steps(&self, t_prime: usize) -> Result<Vec<usize>> {
        let t = self.steps();
        if t_prime == 0 || t_prime > t || t % t_prime != 0 {
            return Err(Error::contract(format!(
                "T' = {t_prime} must divide T = {t} and lie in 1..=T"
            )));
        }
        let k = t / t_prime;
        Ok((0..t_prime).map(|i| t - i * k).collect())
    }
}

fn combine(a: &Tensor, ca: f64, b: &Tensor, cb: f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (ca * x as f64 + cb * y as f64) as f32)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// `√ᾱ_t·θ0 + √(1−ᾱ_t)·ε`.
pub fn forward_marginal(
    theta0: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_t(t)?;
    let a = sched.alpha_bar(t);
    combine(theta0, a.sqrt(), eps, (1.0 - a).sqrt())
}

/// One forward transition `θ_t = √(1−β_t)·θ_{t−1} + √β_t·z`.
pub fn forward_step(prev: &Tensor, t: usize, z: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let b = sched.beta(t);
    combine(prev, (1.0 - b).sqrt(), z, b.sqrt())
}

/// Score from predicted noise: `−ε̂/√(1−ᾱ_t)`.
pub fn eps_to_score(eps_hat: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let s = -1.0 / (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(eps_hat.map(|e| (e as f64 * s) as f32))
}

/// Noise from a score: `−√(1−ᾱ_t)·s`.
pub fn score_to_eps(score: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let s = -(1.0 - sched.alpha_bar(t)).sqrt();
    Ok(score.map(|e| (e as f64 * s) as f32))
}

/// DDIM update from `t` to `t − 1`:
/// `θ_t/√(1−β_t) − (√(1−ᾱ_t)/√(1−β_t) − √(1 − ᾱ_t/(1−β_t)))·ε̂`.
pub fn ddim_step(theta_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let (a, b) = (sched.alpha_bar(t), sched.beta(t));
    let ratio = a / (1.0 - b);
    if ratio > 1.0 {
        return Err(Error::contract(format!(
            "invalid schedule at t={t}: alpha_bar/(1-beta) = {ratio} > 1"
        )));
    }
    let inv = 1.0 / (1.0 - b).sqrt();
    let coef = (1.0 - a).sqrt() * inv - (1.0 - ratio).sqrt();
    combine(theta_t, inv, eps_hat, -coef)
}

/// DDIM update from `t` to any earlier `s < t`:
/// `√(ᾱ_s/ᾱ_t)·θ_t − (√(ᾱ_s/ᾱ_t)·√(1−ᾱ_t) − √(1−ᾱ_s))·ε̂`.
/// Equals [`ddim_step`] when `s = t − 1`.
pub fn ddim_step_to(
    theta_t: &Tensor,
    t: usize,
    s: usize,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_t(t)?;
    if s >= t {
        return Err(Error::contract(format!("DDIM target {s} is not before {t}")));
    }
    let (at, as_) = (sched.alpha_bar(t), sched.alpha_bar(s));
    let r = (as_ / at).sqrt();
    let coef = r * (1.0 - at).sqrt() - (1.0 - as_).sqrt();
    combine(theta_t, r, eps_hat, -coef)
}

/// Guided noise `ε − √(1−ᾱ_t)·ω·g`, the ε-space form of adding `ω·g` to the score.
pub fn guided_eps(eps: &Tensor, g: &Tensor, omega: f32, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    if eps.shape() != g.shape() {
        return Err(Error::contract(format!(
            "guidance gradient shape {:?} vs noise {:?}",
            g.shape(),
            eps.shape()
        )));
    }
    let c = ((1.0 - sched.alpha_bar(t)).sqrt() * omega as f64) as f32;
    let data = eps
        .data()
        .iter()
        .zip(g.data())
        .map(|(&e, &gv)| e - c * gv)
        .collect();
    Tensor::new(eps.shape().to_vec(), data)
}

/// Euler–Maruyama step of the reverse SDE:
/// `θ_{t−1} = θ_t + β_t·(θ_t/2 + score) + √β_t·z`.
pub fn sde_reverse_step(
    theta_t: &Tensor,
    t: usize,
    score: &Tensor,
    z: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_t(t)?;
    if theta_t.shape() != score.shape() || theta_t.shape() != z.shape() {
        return Err(Error::contract("sde step: shape mismatch"));
    }
    let b = sched.beta(t) as f32;
    let sb = b.sqrt();
    let data = theta_t
        .data()
        .iter()
        .zip(score.data())
        .zip(z.data())
        .map(|((&x, &s), &zv)| x + b * (0.5 * x + s) + sb * zv)
        .collect();
    Tensor::new(theta_t.shape().to_vec(), data)
}

/// Exact minimizer of the score-matching loss for `θ0 ~ N(μ0, σ0²I)`:
/// `(θ_t − √ᾱ_t μ0)·√(1−ᾱ_t) / (ᾱ_t σ0² + 1 − ᾱ_t)`.
pub fn analytic_gaussian_eps(
    theta_t: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    mu0: &[f32],
    sigma0: f64,
) -> Result<Tensor> {
    sched.check_t(t)?;
    if sigma0 <= 0.0 {
        return Err(Error::contract(format!("sigma0 must be positive, got {sigma0}")));
    }
    let d = theta_t.cols();
    if mu0.len() != d {
        return Err(Error::contract(format!("mean of width {} for data width {d}", mu0.len())));
    }
    let a = sched.alpha_bar(t);
    let scale = (1.0 - a).sqrt() / (a * sigma0 * sigma0 + 1.0 - a);
    let sa = a.sqrt();
    let data = theta_t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| ((x as f64 - sa * mu0[i % d] as f64) * scale) as f32)
        .collect();
    Tensor::new(theta_t.shape().to_vec(), data)
}

/// Anything that predicts the noise in `θ_t` (`[batch, dim]`) at time `t`.
pub trait EpsModel: Sync {
    fn schedule(&self) -> &NoiseSchedule;

    fn dim(&self) -> usize;

    fn predict_eps(&self, theta_t: &Tensor, t: usize) -> Result<Tensor>;
}

/// Closed-form ε predictor for Gaussian data.
#[derive(Clone, Debug)]
pub struct AnalyticGaussian {
    pub schedule: NoiseSchedule,
    pub mean: Vec<f32>,
    pub std: f64,
}

impl EpsModel for AnalyticGaussian {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn predict_eps(&self, theta_t: &Tensor, t: usize) -> Result<Tensor> {
        analytic_gaussian_eps(theta_t, t, &self.schedule, &self.mean, self.std)
    }
}

/// Learned ε-prediction network `ε_φ(θ_t, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel {
    pub net: Mlp,
    pub schedule: NoiseSchedule,
}

impl ScoreModel {
    pub fn new(spec: MlpSpec, schedule: NoiseSchedule, rng: &mut Rng) -> Result<Self> {
        if spec.input_width() != spec.output_width() {
            return Err(Error::contract(format!(
                "score network maps width {} to {}",
                spec.input_width(),
                spec.output_width()
            )));
        }
        if spec.time_embed == 0 {
            return Err(Error::contract("score network needs a time embedding"));
        }
        Ok(ScoreModel {
            net: Mlp::init(spec, rng)?,
            schedule,
        })
    }
}

impl EpsModel for ScoreModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.net.spec.input_width()
    }

    fn predict_eps(&self, theta_t: &Tensor, t: usize) -> Result<Tensor> {
        self.schedule.check_t(t)?;
        let times = vec![t as f64; theta_t.rows()];
        self.net.predict(theta_t, Some(&times))
    }
}

/// Records `J = mean_b ‖ε_b − ε_φ(√ᾱ θ0_b + √(1−ᾱ) ε_b, t_b)‖²` on `tape`.
pub fn score_match_loss<T: Real>(
    tape: &mut Tape<T>,
    net: &Mlp<T>,
    params: &[Var],
    sched: &NoiseSchedule,
    theta0: &Tensor<T>,
    ts: &[usize],
    eps: &Tensor<T>,
) -> Result<Var> {
    let (rows, cols) = (theta0.rows(), theta0.cols());
    if eps.shape() != theta0.shape() || ts.len() != rows {
        return Err(Error::contract(format!(
            "loss batch: θ0 {:?}, ε {:?}, {} timesteps",
            theta0.shape(),
            eps.shape(),
            ts.len()
        )));
    }
    let mut noised = Vec::with_capacity(rows * cols);
    for (i, &t) in ts.iter().enumerate() {
        sched.check_t(t)?;
        let a = sched.alpha_bar(t);
        let (sa, sn) = (T::from_f64(a.sqrt()), T::from_f64((1.0 - a).sqrt()));
        noised.extend(
            theta0
                .row(i)
                .iter()
                .zip(eps.row(i))
                .map(|(&x, &e)| sa * x + sn * e),
        );
    }
    let x = tape.constant(Tensor::new(theta0.shape().to_vec(), noised)?);
    let times: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
    let pred = net.forward(tape, params, x, Some(&times))?;
    let target = tape.constant(eps.clone());
    let diff = tape.sub(target, pred)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, T::one() / T::from_f64(rows.max(1) as f64)))
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Loss is logged every `log_every` steps and at the last step.
    pub log_every: usize,
    /// When set, the trained model receives an exponential moving average of
    /// its weights with this decay instead of the last iterate.
    pub ema: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 128,
            optimizer: AdamConfig::adamw(1e-4, 0.05),
            seed: 0,
            log_every: 100,
            ema: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// `(step, loss)` pairs, 1-based steps.
    pub losses: Vec<(usize, f32)>,
    pub final_loss: Option<f32>,
}

/// Trains `model` by score matching on the rows of `dataset`.
pub fn train_generator(model: &mut ScoreModel, dataset: &Tensor, cfg: &TrainConfig) -> Result<TrainLog> {
    let n = dataset.rows();
    if dataset.numel() == 0 || n == 0 {
        return Err(Error::contract("cannot train the generator on an empty dataset"));
    }
    if dataset.cols() != model.dim() {
        return Err(Error::contract(format!(
            "dataset width {} vs model width {}",
            dataset.cols(),
            model.dim()
        )));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut opt = OptState::new(cfg.optimizer, &model.net.params);
    let mut log = TrainLog::default();
    let d = dataset.cols();
    let big_t = model.schedule.steps();
    let mut ema = cfg.ema.map(|decay| (decay, model.net.params.flatten()));
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size * d);
        let mut ts = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            batch.extend_from_slice(dataset.row(rng.below(n)));
            ts.push(1 + rng.below(big_t));
        }
        let theta0 = Tensor::matrix(cfg.batch_size, d, batch)?;
        let eps = Tensor::matrix(cfg.batch_size, d, rng.normal_vec(cfg.batch_size * d))?;
        let mut tape = Tape::new();
        let params = model.net.params.bind(&mut tape);
        let loss = score_match_loss(&mut tape, &model.net, &params, &model.schedule, &theta0, &ts, &eps)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::contract(format!("score-matching loss diverged at step {step}")));
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p)).collect();
        opt.step(&mut model.net.params, &grads)?;
        if let Some((decay, avg)) = ema.as_mut() {
            for (a, p) in avg.iter_mut().zip(model.net.params.tensors().flat_map(|t| t.data().iter())) {
                *a = *decay * *a + (1.0 - *decay) * p;
            }
        }
        if step % cfg.log_every.max(1) == 0 || step == cfg.steps {
            log.losses.push((step, value));
        }
        log.final_loss = Some(value);
    }
    if let Some((_, avg)) = ema {
        model.net.params.assign_flat(&avg)?;
    }
    Ok(log)
}

/// Source of the guidance gradient `∇_{θ_t} f(θ_t, t)`.
pub trait GuidanceSignal: Sync {
    fn gradient(&self, theta_t: &Tensor, t: usize) -> Result<Tensor>;
}

impl<F> GuidanceSignal for F
where
    F: Fn(&Tensor, usize) -> Result<Tensor> + Sync,
{
    fn gradient(&self, theta_t: &Tensor, t: usize) -> Result<Tensor> {
        self(theta_t, t)
    }
}

/// A guidance signal together with its weight ω.
#[derive(Clone, Copy)]
pub struct Guidance<'a> {
    pub signal: &'a dyn GuidanceSignal,
    pub weight: f32,
}

/// Counts gradient evaluations of a wrapped signal.
pub struct CountingSignal<'a> {
    inner: &'a dyn GuidanceSignal,
    calls: AtomicUsize,
}

impl<'a> CountingSignal<'a> {
    pub fn new(inner: &'a dyn GuidanceSignal) -> Self {
        CountingSignal {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl GuidanceSignal for CountingSignal<'_> {
    fn gradient(&self, theta_t: &Tensor, t: usize) -> Result<Tensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(theta_t, t)
    }
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    /// Number of DDIM steps T′.
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Final samples are clamped into these bounds when set.
    pub bounds: Option<(f32, f32)>,
    pub record_trace: bool,
    /// Also clamp each step's implied `θ0` estimate into `bounds`.
    pub clip_denoised: bool,
    /// Chains are split across this many threads.
    pub workers: usize,
}

impl SampleOptions {
    pub fn new(steps: usize, batch: usize, seed: u64) -> Self {
        SampleOptions {
            steps,
            batch,
            seed,
            bounds: None,
            record_trace: false,
            clip_denoised: false,
            workers: 1,
        }
    }

    pub fn bounded(self, lo: f32, hi: f32) -> Self {
        SampleOptions {
            bounds: Some((lo, hi)),
            ..self
        }
    }

    /// Bounds plus per-step clamping of the denoised estimate.
    pub fn clipped(self, lo: f32, hi: f32) -> Self {
        SampleOptions {
            bounds: Some((lo, hi)),
            clip_denoised: true,
            ..self
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceStep {
    pub t: usize,
    pub theta_t: Tensor,
    pub eps_hat: Tensor,
}

/// Per-step record of a sampling run, in strictly decreasing `t`.
#[derive(Clone, Debug, Default)]
pub struct SampleTrace {
    pub seed: u64,
    pub steps: Vec<TraceStep>,
}

fn run_ddim_chain(
    model: &dyn EpsModel,
    guidance: Option<Guidance<'_>>,
    mut theta: Tensor,
    timesteps: &[usize],
    stride: usize,
    clip: Option<(f32, f32)>,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<Tensor> {
    let sched = model.schedule();
    for &t in timesteps {
        let mut eps = model.predict_eps(&theta, t)?;
        if let Some(g) = guidance {
            let grad = g.signal.gradient(&theta, t)?;
            grad.ensure_finite("guidance gradient")?;
            eps = guided_eps(&eps, &grad, g.weight, t, sched)?;
        }
        if let Some((lo, hi)) = clip {
            eps = clip_eps(&theta, &eps, t, sched, lo, hi)?;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceStep {
                t,
                theta_t: theta.clone(),
                eps_hat: eps.clone(),
            });
        }
        theta = if stride == 1 {
            ddim_step(&theta, t, &eps, sched)?
        } else {
            ddim_step_to(&theta, t, t - stride, &eps, sched)?
        };
    }
    Ok(theta)
}

/// Re-derives `ε` so that its implied `θ0` lies inside `[lo, hi]`.
fn clip_eps(theta: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule, lo: f32, hi: f32) -> Result<Tensor> {
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
    let data = theta
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| {
            let x0 = ((x - sb * e) / sa).clamp(lo, hi);
            (x - sa * x0) / sb
        })
        .collect();
    Tensor::new(theta.shape().to_vec(), data)
}

fn split_rows(x: &Tensor, parts: usize) -> Vec<Tensor> {
    let (n, d) = (x.rows(), x.cols());
    let per = n.div_ceil(parts.max(1)).max(1);
    (0..n)
        .step_by(per)
        .map(|start| {
            let end = (start + per).min(n);
            Tensor::matrix(end - start, d, x.data()[start * d..end * d].to_vec()).expect("rows")
        })
        .collect()
}

fn stack_rows(parts: Vec<Tensor>, d: usize) -> Tensor {
    let rows = parts.iter().map(Tensor::rows).sum();
    let data = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::matrix(rows, d, data).expect("stacked rows")
}

/// DDIM sampling of `opts.batch` chains started from `θ_T ~ N(0, I)`.
///
/// With guidance, every step uses `guided_eps` with the signal's gradient at
/// the current noised `θ_t`. Returns `[batch, dim]` samples.
pub fn sample(
    model: &dyn EpsModel,
    guidance: Option<Guidance<'_>>,
    opts: &SampleOptions,
) -> Result<(Tensor, Option<SampleTrace>)> {
    let sched = model.schedule();
    let timesteps = sched.strided_steps(opts.steps)?;
    let stride = sched.steps() / opts.steps;
    let d = model.dim();
    let clip = opts.bounds.filter(|_| opts.clip_denoised);
    let mut rng = Rng::new(opts.seed);
    let init = Tensor::matrix(opts.batch, d, rng.normal_vec(opts.batch * d))?;
    if opts.batch == 0 {
        return Ok((init, opts.record_trace.then(|| SampleTrace { seed: opts.seed, steps: vec![] })));
    }

    let (mut out, trace) = if opts.record_trace || opts.workers <= 1 {
        let mut steps = Vec::new();
        let tr = opts.record_trace.then_some(&mut steps);
        let out = run_ddim_chain(model, guidance, init, &timesteps, stride, clip, tr)?;
        let trace = opts.record_trace.then(|| SampleTrace {
            seed: opts.seed,
            steps,
        });
        (out, trace)
    } else {
        let chunks = split_rows(&init, opts.workers);
        let results: Vec<Result<Tensor>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    let ts = &timesteps;
                    s.spawn(move || run_ddim_chain(model, guidance, chunk, ts, stride, clip, None))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampler thread panicked"))
                .collect()
        });
        let parts = results.into_iter().collect::<Result<Vec<_>>>()?;
        (stack_rows(parts, d), None)
    };
    out.ensure_finite("sampler output")?;
    if let Some((lo, hi)) = opts.bounds {
        out.data_mut().iter_mut().for_each(|x| *x = x.clamp(lo, hi));
    }
    Ok((out, trace))
}

/// Ancestral sampling with [`sde_reverse_step`] over all `T` steps.
pub fn sample_sde(
    model: &dyn EpsModel,
    guidance: Option<Guidance<'_>>,
    batch: usize,
    seed: u64,
) -> Result<Tensor> {
    let sched = model.schedule();
    let d = model.dim();
    let mut rng = Rng::new(seed);
    let mut theta = Tensor::matrix(batch, d, rng.normal_vec(batch * d))?;
    for t in (1..=sched.steps()).rev() {
        let mut eps = model.predict_eps(&theta, t)?;
        if let Some(g) = guidance {
            let grad = g.signal.gradient(&theta, t)?;
            eps = guided_eps(&eps, &grad, g.weight, t, sched)?;
        }
        let score = eps_to_score(&eps, t, sched)?;
        let z = if t > 1 {
            Tensor::matrix(batch, d, rng.normal_vec(batch * d))?
        } else {
            Tensor::zeros(&[batch, d])
        };
        theta = sde_reverse_step(&theta, t, &score, &z, sched)?;
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn two_step_constant_schedule() {
        let s = NoiseSchedule::linear(2, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.81).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_reaches_noise() {
        let s = sched();
        assert!(s.alpha_bar(1000) < 1e-4);
        for t in 1..1000 {
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
        }
    }

    #[test]
    fn constant_schedule_is_geometric() {
        let s = NoiseSchedule::linear(50, 0.03, 0.03).unwrap();
        for t in 1..=50 {
            assert!((s.alpha_bar(t) - 0.97f64.powi(t as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_bounds_are_checked() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn strided_steps_cover_uniformly() {
        let s = sched();
        assert_eq!(s.strided_steps(4).unwrap(), vec![1000, 750, 500, 250]);
        assert_eq!(s.strided_steps(1000).unwrap().last(), Some(&1));
        assert!(s.strided_steps(3).is_err());
        assert!(s.strided_steps(0).is_err());
    }

    #[test]
    fn marginal_edge_cases() {
        let s = sched();
        let eps = Tensor::vector(vec![0.3, -1.1]);
        let zero = Tensor::vector(vec![0.0, 0.0]);
        let at_t = forward_marginal(&zero, 1000, &eps, &s).unwrap();
        for (a, e) in at_t.data().iter().zip(eps.data()) {
            assert!((a - e).abs() < 1e-4);
        }
        let theta = Tensor::vector(vec![0.7, -0.2]);
        let near = forward_marginal(&theta, 1, &zero, &s).unwrap();
        for (a, e) in near.data().iter().zip(theta.data()) {
            assert!((a - e).abs() < 1e-4);
        }
        assert!(forward_marginal(&theta, 0, &eps, &s).is_err());
        assert!(forward_marginal(&theta, 1001, &eps, &s).is_err());
    }

    #[test]
    fn forward_step_without_noise_contracts() {
        let s = sched();
        let x = Tensor::vector(vec![1.0, -2.0]);
        let y = forward_step(&x, 500, &Tensor::zeros(&[2]), &s).unwrap();
        let c = (1.0 - s.beta(500)).sqrt() as f32;
        assert_eq!(y.data(), &[c, -2.0 * c]);
    }

    #[test]
    fn score_eps_roundtrip() {
        let s = sched();
        let eps = Tensor::vector(vec![0.5, -1.5, 2.0]);
        let back = score_to_eps(&eps_to_score(&eps, 321, &s).unwrap(), 321, &s).unwrap();
        for (a, b) in back.data().iter().zip(eps.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(eps_to_score(&Tensor::zeros(&[3]), 5, &s).unwrap(), Tensor::zeros(&[3]));
    }

    #[test]
    fn ddim_zero_noise_rescales() {
        let s = sched();
        let x = Tensor::vector(vec![1.0, 2.0]);
        let y = ddim_step(&x, 10, &Tensor::zeros(&[2]), &s).unwrap();
        let inv = (1.0 / (1.0 - s.beta(10)).sqrt()) as f32;
        assert_eq!(y.data(), &[inv, 2.0 * inv]);
    }

    #[test]
    fn ddim_general_step_matches_single_step() {
        let s = sched();
        let x = Tensor::vector(vec![0.4, -1.3, 2.2]);
        let e = Tensor::vector(vec![-0.7, 0.1, 0.9]);
        for t in [1, 2, 500, 1000] {
            let a = ddim_step(&x, t, &e, &s).unwrap();
            let b = ddim_step_to(&x, t, t - 1, &e, &s).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() < 1e-5, "t={t}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn guided_eps_linearity_and_limits() {
        let s = sched();
        let e = Tensor::vector(vec![0.4, -1.3]);
        let g = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(guided_eps(&e, &g, 0.0, 100, &s).unwrap(), e);
        assert_eq!(guided_eps(&e, &Tensor::zeros(&[2]), 3.0, 100, &s).unwrap(), e);
        let one = guided_eps(&Tensor::zeros(&[2]), &g, 1.0, 100, &s).unwrap();
        let two = guided_eps(&Tensor::zeros(&[2]), &g, 2.0, 100, &s).unwrap();
        for (a, b) in one.data().iter().zip(two.data()) {
            assert_eq!(2.0 * a, *b);
        }
        assert!(guided_eps(&e, &Tensor::zeros(&[3]), 1.0, 100, &s).is_err());
    }

    #[test]
    fn sde_step_edge_cases() {
        let s = sched();
        let x = Tensor::vector(vec![0.3, 0.6]);
        let z = Tensor::vector(vec![0.5, -0.5]);
        let sc = Tensor::vector(vec![0.1, 0.2]);
        let a = sde_reverse_step(&x, 7, &sc, &z, &s).unwrap();
        let b = sde_reverse_step(&x, 7, &sc, &z, &s).unwrap();
        assert_eq!(a, b);
        let b7 = s.beta(7) as f32;
        let expect = 0.3 + b7 * (0.15 + 0.1) + b7.sqrt() * 0.5;
        assert_eq!(a.data()[0], expect);
    }

    #[test]
    fn analytic_eps_special_cases() {
        let s = sched();
        let x = Tensor::matrix(1, 2, vec![0.8, -0.4]).unwrap();
        let e = analytic_gaussian_eps(&x, 300, &s, &[0.0, 0.0], 1.0).unwrap();
        let c = (1.0 - s.alpha_bar(300)).sqrt() as f32;
        assert!((e.data()[0] - 0.8 * c).abs() < 1e-6);
        assert!((e.data()[1] + 0.4 * c).abs() < 1e-6);
        let mu = [0.5f32, -1.0];
        let sa = s.alpha_bar(300).sqrt() as f32;
        let at_mean = Tensor::matrix(1, 2, vec![sa * mu[0], sa * mu[1]]).unwrap();
        let e0 = analytic_gaussian_eps(&at_mean, 300, &s, &mu, 2.0).unwrap();
        assert!(e0.max_abs() < 1e-6);
        assert!(analytic_gaussian_eps(&x, 300, &s, &mu, 0.0).is_err());
    }

    #[test]
    fn empty_batch_sample() {
        let m = AnalyticGaussian {
            schedule: sched(),
            mean: vec![0.0; 2],
            std: 1.0,
        };
        let (out, _) = sample(&m, None, &SampleOptions::new(50, 0, 1)).unwrap();
        assert_eq!(out.numel(), 0);
    }

    #[test]
    fn sampling_is_deterministic_and_zero_weight_is_unguided() {
        let m = AnalyticGaussian {
            schedule: sched(),
            mean: vec![0.0; 3],
            std: 1.0,
        };
        let opts = SampleOptions::new(50, 16, 9);
        let (a, _) = sample(&m, None, &opts).unwrap();
        let (b, _) = sample(&m, None, &opts).unwrap();
        assert_eq!(a, b);
        let signal = |x: &Tensor, _t: usize| Ok(x.map(|v| v.sin()));
        let g = Guidance {
            signal: &signal,
            weight: 0.0,
        };
        let (c, _) = sample(&m, Some(g), &opts).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn trace_is_strictly_decreasing() {
        let m = AnalyticGaussian {
            schedule: sched(),
            mean: vec![0.0; 2],
            std: 1.0,
        };
        let mut opts = SampleOptions::new(20, 4, 3);
        opts.record_trace = true;
        let (_, trace) = sample(&m, None, &opts).unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.steps.len(), 20);
        assert!(trace.steps.windows(2).all(|w| w[0].t > w[1].t));
    }

    #[test]
    fn parallel_chains_match_serial() {
        let m = AnalyticGaussian {
            schedule: sched(),
            mean: vec![0.0; 3],
            std: 1.0,
        };
        let opts = SampleOptions::new(50, 10, 4);
        let (a, _) = sample(&m, None, &opts).unwrap();
        let (b, _) = sample(&m, None, &SampleOptions { workers: 3, ..opts }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_with_zero_steps_keeps_init() {
        let mut rng = Rng::new(0);
        let spec = MlpSpec::new(vec![2, 16, 2], crate::diffcore::Activation::Relu, 8).unwrap();
        let mut model = ScoreModel::new(spec, sched(), &mut rng).unwrap();
        let before = model.clone();
        let data = Tensor::matrix(3, 2, vec![0.0; 6]).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        train_generator(&mut model, &data, &cfg).unwrap();
        assert_eq!(model, before);
        let empty = Tensor::matrix(0, 2, vec![]).unwrap();
        assert!(train_generator(&mut model, &empty, &cfg).is_err());
    }

    #[test]
    fn oracle_predictor_has_zero_loss() {
        // A one-layer network whose output is forced to ε by zero weights and
        // ε as bias (single row, so the bias equals the target).
        let spec = MlpSpec::new(vec![2, 2], crate::diffcore::Activation::Relu, 2).unwrap();
        let mut net = Mlp::<f64>::zeros(spec).unwrap();
        let eps = Tensor::<f64>::matrix(1, 2, vec![0.3, -0.9]).unwrap();
        let mut flat = net.params.flatten();
        let n = flat.len();
        flat[n - 2] = 0.3;
        flat[n - 1] = -0.9;
        net.params.assign_flat(&flat).unwrap();
        let mut tape = Tape::new();
        let p = net.params.bind(&mut tape);
        let theta0 = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let l = score_match_loss(&mut tape, &net, &p, &sched(), &theta0, &[10], &eps).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }
}
