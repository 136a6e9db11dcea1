//! The curriculum loop: generator pre-training, regret-guided environment
//! generation, agent and critic updates, plus baselines, oracles and
//! checkpoints.

pub mod analysis;
mod checkpoint;
mod config;
mod gradsuite;
mod oracles;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::{
    CriticConfig, DiffusionConfig, GuidanceSettings, Method, NetConfig, PretrainConfig, RunConfig, SupportConfig,
    TrainSettings,
};
pub use gradsuite::{check_family, gradient_suite, GradCheckReport, FAMILIES, FD_STEP};
pub use oracles::{
    closed_form_lambda, guided_gaussian_moments, histogram01, moments, tilted_bin_masses, tilted_tv, total_variation,
    train_uniform_generator, uniform_posterior_var, verify_gaussian_guidance, verify_tv, GaussianLinearGuidance,
    GaussianReport, TvOptions, TvReport, UniformPosteriorGuidance,
};
pub use train::{
    checkpoint_path, controllable_generate, load_generator, load_or_pretrain, load_pretrain_dataset, load_state,
    metrics_path, pretrain, read_metrics, run, run_dir, run_with_generator, summarize, train_epoch, BatchSummary,
    ControlReport, EpochRow, LogRow, Pretrained, RunSummary, TrainState, EVAL_HEADER, METRICS_HEADER,
};
