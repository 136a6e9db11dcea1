//! Dense numerics with reverse-mode differentiation and Adam/AdamW.

mod gradcheck;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use mlp::{sinusoidal_embedding, Activation, Mlp, MlpSpec, ParamSet};
pub use optim::{clip_grad_norm, grad_norm, AdamConfig, OptState};
pub use tape::{logsumexp_slice, softmax_slice, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
