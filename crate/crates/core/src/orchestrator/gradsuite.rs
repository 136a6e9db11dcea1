//! Finite-difference checks of every differentiable loss and guidance signal.
//!
//! Each family draws small random instances in `f64` and compares the tape
//! gradient against central differences. Networks use tanh so that no probe
//! straddles a ReLU kink.

use crate::agent::{ppo_loss_graph, PpoInputs};
use crate::diffcore::{finite_diff_check, Activation, Mlp, MlpSpec, Tape, Tensor, Var};
use crate::diffusion::{score_match_loss, NoiseSchedule};
use crate::error::Result;
use crate::regret::{critic_regret_graph, cross_entropy_graph, difficulty_graph, ReturnSupport};
use crate::rng::{derive_seed, Rng};

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub instances: usize,
    /// Worst coordinate-wise relative error over all instances.
    pub worst: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

pub const FAMILIES: [&str; 5] = ["score_matching", "cross_entropy", "cvar_regret", "difficulty_logprob", "ppo"];

/// Runs `instances` random checks of each family in [`FAMILIES`].
pub fn gradient_suite(instances: usize, seed: u64, tolerance: f64) -> Result<Vec<GradCheckReport>> {
    FAMILIES
        .iter()
        .map(|&name| {
            let mut rng = Rng::new(derive_seed(seed, &format!("gradsuite.{name}")));
            let mut worst = 0.0f64;
            for _ in 0..instances {
                worst = worst.max(check_family(name, &mut rng)?);
            }
            Ok(GradCheckReport {
                name,
                instances,
                worst,
                tolerance,
            })
        })
        .collect()
}

/// One random instance of the named family; returns its relative error.
pub fn check_family(name: &str, rng: &mut Rng) -> Result<f64> {
    match name {
        "score_matching" => score_matching(rng),
        "cross_entropy" => cross_entropy(rng),
        "cvar_regret" => regret(rng),
        "difficulty_logprob" => difficulty(rng),
        "ppo" => ppo(rng),
        other => Err(crate::Error::contract(format!("unknown gradient family `{other}`"))),
    }
}

fn random_net(rng: &mut Rng, widths: Vec<usize>, time_embed: usize) -> Result<Mlp<f64>> {
    let mut net = Mlp::<f64>::init(MlpSpec::new(widths, Activation::Tanh, time_embed)?, rng)?;
    let flat: Vec<f64> = (0..net.params.numel()).map(|_| 0.6 * rng.normal()).collect();
    net.params.assign_flat(&flat)?;
    Ok(net)
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Result<Tensor<f64>> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| scale * rng.normal()).collect())
}

fn random_times(rng: &mut Rng, rows: usize, big_t: usize) -> Vec<usize> {
    (0..rows).map(|_| 1 + rng.below(big_t)).collect()
}

fn dims(rng: &mut Rng) -> (usize, usize, usize) {
    (1 + rng.below(3), 2 + rng.below(3), 3 + rng.below(5))
}

/// Gradient check with respect to the flattened parameters of `net`.
fn check_params<F>(net: &Mlp<f64>, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let flat = Tensor::vector(net.params.flatten());
    finite_diff_check(
        |tape, x| {
            let params = net.params.slice_flat(tape, x)?;
            f(tape, &params)
        },
        &flat,
        FD_STEP,
    )
}

fn score_matching(rng: &mut Rng) -> Result<f64> {
    let (rows, d, hidden) = dims(rng);
    let sched = NoiseSchedule::linear(50, 1e-3, 0.2)?;
    let net = random_net(rng, vec![d, hidden, d], 4)?;
    let theta0 = normal_matrix(rng, rows, d, 1.0)?;
    let eps = normal_matrix(rng, rows, d, 1.0)?;
    let ts = random_times(rng, rows, sched.steps());
    check_params(&net, |tape, p| score_match_loss(tape, &net, p, &sched, &theta0, &ts, &eps))
}

fn random_targets(rng: &mut Rng, rows: usize, m: usize) -> Result<Tensor<f64>> {
    let mut data = Vec::with_capacity(rows * m);
    for _ in 0..rows {
        let w: Vec<f64> = (0..m).map(|_| rng.uniform() + 1e-3).collect();
        let s: f64 = w.iter().sum();
        data.extend(w.iter().map(|x| x / s));
    }
    Tensor::matrix(rows, m, data)
}

fn cross_entropy(rng: &mut Rng) -> Result<f64> {
    let (rows, d, hidden) = dims(rng);
    let m = 3 + rng.below(6);
    let net = random_net(rng, vec![d, hidden, m], 4)?;
    let theta = normal_matrix(rng, rows, d, 1.0)?;
    let times: Vec<f64> = random_times(rng, rows, 100).into_iter().map(|t| t as f64).collect();
    let targets = random_targets(rng, rows, m)?;
    check_params(&net, |tape, p| cross_entropy_graph(tape, &net, p, &theta, &times, &targets))
}

fn critic_instance(rng: &mut Rng) -> Result<(Mlp<f64>, Tensor<f64>, Vec<f64>, usize)> {
    let (rows, d, hidden) = dims(rng);
    let m = 4 + rng.below(8);
    let net = random_net(rng, vec![d, hidden, m], 4)?;
    let theta = normal_matrix(rng, rows, d, 1.0)?;
    let times = random_times(rng, rows, 100).into_iter().map(|t| t as f64).collect();
    Ok((net, theta, times, m))
}

fn regret(rng: &mut Rng) -> Result<f64> {
    let (net, theta, times, m) = critic_instance(rng)?;
    let support = ReturnSupport::new(m, 0.0, 1.0)?;
    let alpha = 0.05 + 0.9 * rng.uniform();
    finite_diff_check(
        |tape, x| {
            let p = net.params.bind(tape);
            critic_regret_graph(tape, &net, &p, &support, x, &times, alpha)
        },
        &theta,
        FD_STEP,
    )
}

fn difficulty(rng: &mut Rng) -> Result<f64> {
    let (net, theta, times, m) = critic_instance(rng)?;
    let k = 1 + rng.below(m);
    finite_diff_check(
        |tape, x| {
            let p = net.params.bind(tape);
            difficulty_graph(tape, &net, &p, x, &times, k)
        },
        &theta,
        FD_STEP,
    )
}

fn ppo(rng: &mut Rng) -> Result<f64> {
    let (_, obs_dim, hidden) = dims(rng);
    let rows = 3 + rng.below(6);
    let actions = 3;
    let policy = random_net(rng, vec![obs_dim, hidden, actions], 0)?;
    let value = random_net(rng, vec![obs_dim, hidden, 1], 0)?;
    let inputs = PpoInputs {
        obs: normal_matrix(rng, rows, obs_dim, 1.0)?,
        actions: (0..rows).map(|_| rng.below(actions)).collect(),
        old_logp: (0..rows).map(|_| -0.2 - 2.0 * rng.uniform()).collect(),
        advantages: (0..rows).map(|_| rng.normal()).collect(),
        targets: (0..rows).map(|_| rng.normal()).collect(),
    };
    let (clip, vf, ent) = (0.1 + 0.3 * rng.uniform(), 0.5, 0.01 * rng.uniform());
    let split = policy.params.numel();
    let mut flat = policy.params.flatten();
    flat.extend(value.params.flatten());
    finite_diff_check(
        |tape, x| {
            let pf = tape.slice(x, 0, &[split])?;
            let vf_flat = tape.slice(x, split, &[value.params.numel()])?;
            let pp = policy.params.slice_flat(tape, pf)?;
            let vp = value.params.slice_flat(tape, vf_flat)?;
            Ok(ppo_loss_graph(tape, &policy, &pp, &value, &vp, &inputs, clip, vf, ent)?.total)
        },
        &Tensor::vector(flat),
        FD_STEP,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_family_passes_a_few_instances() {
        for r in gradient_suite(3, 11, 1e-3).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn unknown_family_is_rejected() {
        assert!(check_family("nope", &mut Rng::new(0)).is_err());
    }
}
