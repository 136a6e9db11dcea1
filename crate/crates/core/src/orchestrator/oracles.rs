//! Closed-form checks of guided sampling.
//!
//! Guidance toward a tilted target `p(θ0)·e^{ω r(θ0)}` needs the gradient of
//! the time-consistent reward `E[r(θ0) | θ_t]` at each noise level, which is
//! also what a critic trained on noised inputs learns. Both oracles below use
//! that signal in closed form.

use crate::diffcore::{logsumexp_slice, Activation, AdamConfig, MlpSpec, Tensor};
use crate::diffusion::{sample, EpsModel, Guidance, GuidanceSignal, NoiseSchedule, SampleOptions, ScoreModel, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

/// Soft-UED optimum over a finite set: `Λ_i ∝ exp(ω·r_i)`.
pub fn closed_form_lambda(regrets: &[f64], omega: f64) -> Result<Vec<f64>> {
    if regrets.is_empty() {
        return Err(Error::contract("closed-form target needs at least one regret"));
    }
    if regrets.iter().any(|r| !r.is_finite()) || !omega.is_finite() {
        return Err(Error::contract("non-finite regret or weight"));
    }
    let logits: Vec<f64> = regrets.iter().map(|r| omega * r).collect();
    let lse = logsumexp_slice(&logits);
    Ok(logits.iter().map(|l| (l - lse).exp()).collect())
}

/// `∇_{θ_t} E[a·θ0 | θ_t] = √ᾱ_t·a` for standard normal data.
pub struct GaussianLinearGuidance {
    pub schedule: NoiseSchedule,
    pub direction: Vec<f32>,
}

impl GuidanceSignal for GaussianLinearGuidance {
    fn gradient(&self, theta_t: &Tensor, t: usize) -> Result<Tensor> {
        let d = self.direction.len();
        if theta_t.cols() != d {
            return Err(Error::contract(format!("direction of width {d} for θ of width {}", theta_t.cols())));
        }
        let s = self.schedule.alpha_bar(t).sqrt() as f32;
        let row: Vec<f32> = self.direction.iter().map(|a| a * s).collect();
        let data = (0..theta_t.rows()).flat_map(|_| row.iter().copied()).collect();
        Tensor::new(theta_t.shape().to_vec(), data)
    }
}

/// Per-dimension moments of a guided sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianReport {
    pub omega: f64,
    pub target_mean: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianReport {
    /// Largest `|mean − ω·a|` over dimensions.
    pub fn mean_error(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.target_mean)
            .map(|(m, t)| (m - t).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|var − 1|` over dimensions.
    pub fn var_error(&self) -> f64 {
        self.var.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn check(&self, mean_tol: f64, var_tol: f64) -> Result<()> {
        if self.mean_error() > mean_tol || self.var_error() > var_tol {
            return Err(Error::Verification(format!(
                "guided Gaussian ω={}: mean {:?} vs {:?} (tol {mean_tol}), var {:?} (tol {var_tol})",
                self.omega, self.mean, self.target_mean, self.var
            )));
        }
        Ok(())
    }
}

/// Column means and population variances of `[n, d]` samples.
pub fn moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0f64; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut var = vec![0.0f64; d];
    for r in 0..n {
        for ((s, &v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    var.iter_mut().for_each(|s| *s /= n.max(1) as f64);
    (mean, var)
}

/// Samples `model` (trained on `N(0, I)`) with linear-reward guidance and
/// reports the terminal moments. The target is `N(ω·a, I)`.
pub fn guided_gaussian_moments(
    model: &dyn EpsModel,
    omega: f64,
    direction: &[f32],
    samples: usize,
    sample_steps: usize,
    seed: u64,
    workers: usize,
) -> Result<GaussianReport> {
    if direction.len() != model.dim() {
        return Err(Error::contract("direction width differs from the model"));
    }
    let signal = GaussianLinearGuidance {
        schedule: model.schedule().clone(),
        direction: direction.to_vec(),
    };
    let guidance = Guidance {
        signal: &signal,
        weight: omega as f32,
    };
    let mut opts = SampleOptions::new(sample_steps, samples, seed);
    opts.workers = workers;
    let (x, _) = sample(model, Some(guidance), &opts)?;
    let (mean, var) = moments(&x);
    Ok(GaussianReport {
        omega,
        target_mean: direction.iter().map(|&a| omega * a as f64).collect(),
        mean,
        var,
    })
}

/// The analytic-score version: mean within 0.1 of `ω·a` and variance within
/// 0.15 of 1, or a verification error carrying the measured statistics.
pub fn verify_gaussian_guidance(omega: f64, direction: &[f32], samples: usize, seed: u64) -> Result<GaussianReport> {
    let model = crate::diffusion::AnalyticGaussian {
        schedule: NoiseSchedule::linear(1000, 1e-4, 0.02)?,
        mean: vec![0.0; direction.len()],
        std: 1.0,
    };
    let report = guided_gaussian_moments(&model, omega, direction, samples, 100, seed, 1)?;
    report.check(0.1, 0.15)?;
    Ok(report)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `Var[θ0 | θ_t]` for `θ0 ~ U[0, 1]`: a normal with mean `θ_t/√ᾱ` and
/// standard deviation `√(1−ᾱ)/√ᾱ` truncated to `[0, 1]`.
pub fn uniform_posterior_var(theta_t: f64, alpha_bar: f64) -> f64 {
    let sa = alpha_bar.sqrt();
    let m = theta_t / sa;
    let s = (1.0 - alpha_bar).sqrt() / sa;
    let a = -m / s;
    let b = (1.0 - m) / s;
    let z = if a > 0.0 {
        // Both limits in the upper tail: difference of survival functions.
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    };
    if z > 1e-12 {
        let (pa, pb) = (normal_pdf(a), normal_pdf(b));
        let r = (pa - pb) / z;
        let v = s * s * (1.0 + (a * pa - b * pb) / z - r * r);
        return v.clamp(0.0, 1.0 / 12.0);
    }
    // Far outside the interval the posterior is an exponential at the
    // nearest end with rate |distance|/s².
    let dist = if m < 0.0 { -m } else { m - 1.0 };
    (s * s / dist.max(1e-300)).powi(2).min(1.0 / 12.0)
}

/// `∇_{θ_t} E[θ0 | θ_t]` for uniform data on `[0, 1]`, elementwise.
pub struct UniformPosteriorGuidance {
    pub schedule: NoiseSchedule,
}

impl GuidanceSignal for UniformPosteriorGuidance {
    fn gradient(&self, theta_t: &Tensor, t: usize) -> Result<Tensor> {
        let ab = self.schedule.alpha_bar(t);
        let scale = ab.sqrt() / (1.0 - ab);
        Ok(theta_t.map(|x| (scale * uniform_posterior_var(x as f64, ab)) as f32))
    }
}

/// Settings of the 1-D distribution-match check.
#[derive(Clone, Debug)]
pub struct TvOptions {
    pub train_steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub sample_steps: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TvOptions {
    fn default() -> Self {
        TvOptions {
            train_steps: 15000,
            batch_size: 256,
            hidden: 64,
            sample_steps: 100,
            seed: 0,
            workers: 1,
        }
    }
}

/// Score model fitted to `U[0, 1]` samples.
pub fn train_uniform_generator(opts: &TvOptions) -> Result<ScoreModel> {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let spec = MlpSpec::new(vec![1, opts.hidden, opts.hidden, 1], Activation::Relu, 16)?;
    let mut rng = Rng::new(derive_seed(opts.seed, "verify_tv.init"));
    let mut model = ScoreModel::new(spec, sched, &mut rng)?;
    let n = 20_000;
    let mut data_rng = Rng::new(derive_seed(opts.seed, "verify_tv.data"));
    let data = Tensor::matrix(n, 1, (0..n).map(|_| data_rng.uniform() as f32).collect())?;
    let cfg = TrainConfig {
        steps: opts.train_steps,
        batch_size: opts.batch_size,
        optimizer: AdamConfig::adam(1e-3),
        seed: derive_seed(opts.seed, "verify_tv.train"),
        log_every: opts.train_steps.max(1),
        ema: None,
    };
    crate::diffusion::train_generator(&mut model, &data, &cfg)?;
    Ok(model)
}

/// Bin masses of the density `∝ e^{ωθ}` on `[0, 1]`.
pub fn tilted_bin_masses(bins: usize, omega: f64) -> Vec<f64> {
    if omega.abs() < 1e-12 {
        return vec![1.0 / bins as f64; bins];
    }
    let total = omega.exp_m1();
    (0..bins)
        .map(|j| {
            let lo = omega * j as f64 / bins as f64;
            let hi = omega * (j + 1) as f64 / bins as f64;
            (hi.exp() - lo.exp()) / total
        })
        .collect()
}

pub fn histogram01(x: &[f32], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0f64; bins];
    for &v in x {
        let j = ((v.clamp(0.0, 1.0) as f64) * bins as f64) as usize;
        h[j.min(bins - 1)] += 1.0;
    }
    let n = x.len().max(1) as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Debug)]
pub struct TvReport {
    pub omega: f64,
    pub tv: f64,
    pub histogram: Vec<f64>,
    pub target: Vec<f64>,
}

/// Guided samples of `model` against the tilted uniform density.
pub fn tilted_tv(model: &ScoreModel, bins: usize, omega: f64, samples: usize, opts: &TvOptions) -> Result<TvReport> {
    if bins < 10 {
        return Err(Error::contract(format!("verify_tv needs at least 10 bins, got {bins}")));
    }
    let signal = UniformPosteriorGuidance {
        schedule: model.schedule.clone(),
    };
    let guidance = Guidance {
        signal: &signal,
        weight: omega as f32,
    };
    let mut sopts = SampleOptions::new(opts.sample_steps, samples, derive_seed(opts.seed, &format!("verify_tv.sample.{omega}")))
        .bounded(0.0, 1.0);
    sopts.workers = opts.workers;
    let (x, _) = sample(model, Some(guidance), &sopts)?;
    let histogram = histogram01(x.data(), bins);
    let target = tilted_bin_masses(bins, omega);
    Ok(TvReport {
        omega,
        tv: total_variation(&histogram, &target),
        histogram,
        target,
    })
}

/// Trains a 1-D generator on `U[0, 1]`, guides it with the reward `r(θ) = θ`
/// at weight ω and returns the total-variation distance to `∝ e^{ωθ}`.
pub fn verify_tv(bins: usize, omega: f64, samples: usize, opts: &TvOptions) -> Result<TvReport> {
    let model = train_uniform_generator(opts)?;
    tilted_tv(&model, bins, omega, samples, opts)
}
