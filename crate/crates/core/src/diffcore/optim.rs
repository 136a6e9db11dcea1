use super::mlp::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters; `weight_decay > 0` turns it into AdamW.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl AdamConfig {
    pub fn adam(lr: f32) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f32, weight_decay: f32) -> Self {
        AdamConfig {
            weight_decay,
            ..AdamConfig::adam(lr)
        }
    }

    pub fn with_eps(self, eps: f32) -> Self {
        AdamConfig { eps, ..self }
    }
}

/// Moment accumulators for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        OptState {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// One bias-corrected Adam step. Decoupled decay `p ← p·(1 − lr·wd)` is
    /// applied before the moment update.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer: {} gradients for {} parameters ({} moment slots)",
                grads.len(),
                params.len(),
                self.m.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "optimizer: gradient of `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            g.ensure_finite(&format!("gradient of `{name}`"))?;
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - (c.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (c.beta2 as f64).powi(self.step as i32);
        let decay = 1.0 - c.lr * c.weight_decay;
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..pd.len() {
                if c.weight_decay != 0.0 {
                    pd[i] *= decay;
                }
                let md = &mut m.data_mut()[i];
                *md = c.beta1 * *md + (1.0 - c.beta1) * gd[i];
                let vd = &mut v.data_mut()[i];
                *vd = c.beta2 * *vd + (1.0 - c.beta2) * gd[i] * gd[i];
                let m_hat = *md as f64 / bc1;
                let v_hat = *vd as f64 / bc2;
                pd[i] -= (c.lr as f64 * m_hat / (v_hat.sqrt() + c.eps as f64)) as f32;
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set (64-bit accumulation).
pub fn grad_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so that their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
