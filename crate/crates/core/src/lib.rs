//! Adversarial environment design with regret-guided diffusion.
//!
//! A diffusion model over continuous maze parameters is steered at sampling
//! time by the input gradient of a regret estimate. The regret comes from a
//! distributional environment critic: the gap between the upper-tail CVaR and
//! the mean of the predicted return distribution. The generated curriculum
//! trains a PPO agent, whose episodic returns in turn train the critic.
//!
//! Modules, bottom-up:
//!
//! - [`diffcore`]: tensors, tape-based reverse-mode differentiation, MLPs, Adam.
//! - [`diffusion`]: noise schedule, score-matching training, DDIM / SDE samplers
//!   with a guidance hook.
//! - [`regret`]: return support, categorical critic, CVaR regret and the
//!   guidance gradients.
//! - [`envs`]: maze parameter tensors, decoding, dynamics, metrics.
//! - [`agent`]: PPO with GAE.
//! - [`orchestrator`]: the curriculum loop, baselines, oracles, checkpoints.
//! - [`cli`]: configuration files and subcommand dispatch.

pub mod agent;
pub mod cli;
pub mod diffcore;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod orchestrator;
pub mod regret;
pub mod rng;

pub use error::{Error, Result};
