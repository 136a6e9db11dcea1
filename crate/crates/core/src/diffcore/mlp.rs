use std::fmt;

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}` (expected relu or tanh)")),
        }
    }
}

/// Shape of a dense network.
///
/// `widths = [input, hidden.., output]`. When `time_embed > 0`, sinusoidal
/// features of the diffusion time are appended to the input, so the first
/// linear layer has `widths[0] + time_embed` inputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub time_embed: usize,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, time_embed: usize) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            activation,
            time_embed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        if self.widths.contains(&0) {
            return Err(Error::contract(format!(
                "MLP widths must be positive: {:?}",
                self.widths
            )));
        }
        if self.time_embed % 2 != 0 {
            return Err(Error::contract(format!(
                "time-embedding width {} is odd",
                self.time_embed
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers())
            .map(|l| {
                let fan_in = self.widths[l] + if l == 0 { self.time_embed } else { 0 };
                (fan_in, self.widths[l + 1])
            })
            .collect()
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Real = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        ParamSet { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn numel(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// All values concatenated in order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::contract(format!(
                "{} values for {} parameters",
                flat.len(),
                self.numel()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Records every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Views consecutive slices of a flat tape variable (laid out as
    /// [`ParamSet::flatten`]) as this set's tensors.
    pub fn slice_flat(&self, tape: &mut Tape<T>, flat: Var) -> Result<Vec<Var>> {
        let mut offset = 0;
        let mut vars = Vec::with_capacity(self.len());
        for t in self.tensors() {
            vars.push(tape.slice(flat, offset, t.shape())?);
            offset += t.numel();
        }
        Ok(vars)
    }

    /// Replaces tensors by name; shapes must agree.
    pub fn load_from<'a>(
        &mut self,
        prefix: &str,
        lookup: impl Fn(&str) -> Option<&'a Tensor<f32>>,
    ) -> Result<()> {
        for (name, t) in &mut self.entries {
            let key = format!("{prefix}{name}");
            let src = lookup(&key)
                .ok_or_else(|| Error::contract(format!("missing tensor `{key}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::contract(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.cast();
        }
        Ok(())
    }
}

/// Sinusoidal features of per-row times: `[sin(t·f_k).., cos(t·f_k)..]` with
/// `f_k = 10000^(-k/half)`.
pub fn sinusoidal_embedding<T: Real>(times: &[f64], width: usize) -> Tensor<T> {
    let half = width / 2;
    let mut data = Vec::with_capacity(times.len() * width);
    for &t in times {
        let freqs = (0..half).map(|k| (-(10_000f64.ln()) * k as f64 / half as f64).exp());
        let (sins, coss): (Vec<T>, Vec<T>) = freqs
            .map(|f| {
                let (s, c) = (t * f).sin_cos();
                (T::from_f64(s), T::from_f64(c))
            })
            .unzip();
        data.extend(sins);
        data.extend(coss);
    }
    Tensor::matrix(times.len(), width, data).expect("embedding shape")
}

/// Dense network with per-layer weights `l{i}.w` (`fan_in × fan_out`) and
/// biases `l{i}.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Real = f32> {
    pub spec: MlpSpec,
    pub params: ParamSet<T>,
}

impl<T: Real> Mlp<T> {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut entries = Vec::new();
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| T::from_f64((2.0 * rng.uniform() - 1.0) * bound))
                .collect();
            entries.push((format!("l{l}.w"), Tensor::matrix(fan_in, fan_out, w)?));
            entries.push((format!("l{l}.b"), Tensor::zeros(&[fan_out])));
        }
        Ok(Mlp {
            spec,
            params: ParamSet::new(entries),
        })
    }

    /// Network with every weight and bias zero.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut entries = Vec::new();
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            entries.push((format!("l{l}.w"), Tensor::zeros(&[fan_in, fan_out])));
            entries.push((format!("l{l}.b"), Tensor::zeros(&[fan_out])));
        }
        Ok(Mlp {
            spec,
            params: ParamSet::new(entries),
        })
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    /// Records the forward pass on `tape` using parameter leaves `params`
    /// (from [`ParamSet::bind`]). `times` must hold one entry per input row
    /// when the spec has a time embedding.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        input: Var,
        times: Option<&[f64]>,
    ) -> Result<Var> {
        let spec = &self.spec;
        if params.len() != 2 * spec.layers() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                2 * spec.layers(),
                params.len()
            )));
        }
        let x = tape.value(input);
        if x.shape().len() != 2 || x.cols() != spec.input_width() {
            return Err(Error::contract(format!(
                "layer 0: input shape {:?} does not match width {}",
                x.shape(),
                spec.input_width()
            )));
        }
        let rows = x.rows();
        let mut h = input;
        if spec.time_embed > 0 {
            let times = times
                .ok_or_else(|| Error::contract("layer 0: diffusion time required by embedding"))?;
            if times.len() != rows {
                return Err(Error::contract(format!(
                    "layer 0: {} times for {rows} rows",
                    times.len()
                )));
            }
            let emb = tape.constant(sinusoidal_embedding(times, spec.time_embed));
            h = tape.concat_cols(h, emb)?;
        }
        for l in 0..spec.layers() {
            h = tape
                .matmul(h, params[2 * l])
                .map_err(|e| e.context(format!("layer {l}")))?;
            h = tape
                .add_row(h, params[2 * l + 1])
                .map_err(|e| e.context(format!("layer {l}")))?;
            if l + 1 < spec.layers() {
                h = match spec.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        Ok(h)
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, input: &Tensor<T>, times: Option<&[f64]>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let y = self.forward(&mut tape, &params, x, times)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: Vec<usize>, temb: usize) -> MlpSpec {
        MlpSpec::new(widths, Activation::Relu, temb).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::<f32>::zeros(spec(vec![3, 8, 8, 2], 4)).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        let y = mlp.predict(&x, Some(&[3.0, 700.0])).unwrap();
        assert_eq!(y, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn identity_single_layer() {
        let mut mlp = Mlp::<f32>::zeros(spec(vec![2, 2], 0)).unwrap();
        mlp.params.assign_flat(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.25, -4.0]).unwrap();
        assert_eq!(mlp.predict(&x, None).unwrap(), x);
    }

    #[test]
    fn embedding_at_time_zero() {
        let e = sinusoidal_embedding::<f32>(&[0.0], 8);
        assert_eq!(&e.data()[..4], &[0.0; 4]);
        assert_eq!(&e.data()[4..], &[1.0; 4]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mlp = Mlp::<f32>::zeros(spec(vec![3, 4, 2], 0)).unwrap();
        let x = Tensor::matrix(1, 5, vec![0.0; 5]).unwrap();
        let err = mlp.predict(&x, None).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
    }

    #[test]
    fn spec_invariants() {
        assert!(MlpSpec::new(vec![3], Activation::Tanh, 0).is_err());
        assert!(MlpSpec::new(vec![3, 2], Activation::Tanh, 3).is_err());
        let s = spec(vec![3, 5, 2], 4);
        assert_eq!(s.layer_dims(), vec![(7, 5), (5, 2)]);
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mut rng = Rng::new(0);
        let mlp = Mlp::<f32>::init(spec(vec![10, 20, 5], 0), &mut rng).unwrap();
        let bound = (6.0f32 / 30.0).sqrt();
        assert!(mlp.params.get(0).data().iter().all(|w| w.abs() <= bound));
        assert!(mlp.params.get(1).data().iter().all(|&b| b == 0.0));
    }
}
