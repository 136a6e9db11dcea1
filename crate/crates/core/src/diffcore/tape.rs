//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep.
//! Row-wise primitives (softmax, logsumexp, pick, ...) treat a tensor as
//! `rows() × cols()`.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Var, Var),
    LogSoftmax(Var),
    Softmax(Var),
    LogSumExp(Var),
    Clamp(Var, T, T),
    Minimum(Var, Var),
    Pick(Var, Vec<usize>),
    Slice(Var, usize),
    Reshape(Var),
    /// Upper-tail CVaR of each row of a probability matrix. `takes_prob[i]`
    /// records which branch of `min(p_i, budget)` was active.
    CvarUpper {
        probs: Var,
        support: Vec<T>,
        alpha: T,
        takes_prob: Vec<bool>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of primitive operations and their values.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Clone, Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "{op}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn row_shape(rows: usize, shape: &[usize]) -> Vec<usize> {
    if shape.len() >= 2 {
        vec![rows]
    } else {
        Vec::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value)
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::contract(format!(
                "matmul: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m, k, n, av.data(), k as isize, 1, bv.data(), n as isize, 1, T::zero(), &mut out,
            n as isize, 1,
        );
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let c = xv.cols();
        if rv.numel() != c {
            return Err(Error::contract(format!(
                "add_row: {:?} + {:?}",
                xv.shape(),
                rv.shape()
            )));
        }
        let r = rv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r[i % c])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow(x, row)))
    }

    /// Multiplies every row of `x` elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let c = xv.cols();
        if rv.numel() != c {
            return Err(Error::contract(format!(
                "mul_row: {:?} * {:?}",
                xv.shape(),
                rv.shape()
            )));
        }
        let r = rv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * r[i % c])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulRow(x, row)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "add")?;
        let value = zip_map(av, bv, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "sub")?;
        let value = zip_map(av, bv, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "mul")?;
        let value = zip_map(av, bv, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.exp());
        self.push(value, Op::Exp(x))
    }

    /// Natural log; inputs must be positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::contract("ln of a non-positive value"));
        }
        let value = xv.map(|v| v.ln());
        Ok(self.push(value, Op::Ln(x)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x))
    }

    /// Sum of all elements (64-bit accumulation).
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_f64();
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.sum_f64() / xv.numel().max(1) as f64;
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(x))
    }

    /// Per-row sums: `[m, n] → [m]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.rows();
        let data: Vec<T> = (0..m)
            .map(|i| T::from_f64(xv.row(i).iter().map(|v| v.as_f64()).sum()))
            .collect();
        let value = Tensor::new(row_shape(m, xv.shape()), data).expect("row shape");
        self.push(value, Op::SumCols(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::contract(format!(
                "concat_cols: {:?} with {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let value = Tensor::matrix(m, p + q, data)?;
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    /// Numerically stable row-wise `log softmax`.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (m, c) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(m * c);
        for i in 0..m {
            let row = xv.row(i);
            let lse = logsumexp_slice(row);
            data.extend(row.iter().map(|&v| v - lse));
        }
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::LogSoftmax(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (m, c) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(m * c);
        for i in 0..m {
            data.extend(softmax_slice(xv.row(i)));
        }
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Softmax(x))
    }

    /// Row-wise `log Σ exp`: `[m, n] → [m]`.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.rows();
        let data = (0..m).map(|i| logsumexp_slice(xv.row(i))).collect();
        let value = Tensor::new(row_shape(m, xv.shape()), data).expect("row shape");
        self.push(value, Op::LogSumExp(x))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the bounds.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp(x, lo, hi))
    }

    /// Elementwise minimum; ties (`a ≤ b`) route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "minimum")?;
        let value = zip_map(av, bv, |x, y| if x <= y { x } else { y });
        Ok(self.push(value, Op::Minimum(a, b)))
    }

    /// Selects column `idx[i]` of row `i`: `[m, n] → [m]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (m, c) = (xv.rows(), xv.cols());
        if idx.len() != m || idx.iter().any(|&j| j >= c) {
            return Err(Error::contract(format!(
                "pick: {} indices into {:?}",
                idx.len(),
                xv.shape()
            )));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| xv.row(i)[j]).collect();
        let value = Tensor::new(row_shape(m, xv.shape()), data)?;
        Ok(self.push(value, Op::Pick(x, idx.to_vec())))
    }

    /// Contiguous flat slice of `x` starting at `offset`, viewed as `shape`.
    pub fn slice(&mut self, x: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let len: usize = shape.iter().product();
        if offset + len > xv.numel() {
            return Err(Error::contract(format!(
                "slice [{offset}, {}) out of {} values",
                offset + len,
                xv.numel()
            )));
        }
        let value = Tensor::new(shape.to_vec(), xv.data()[offset..offset + len].to_vec())?;
        Ok(self.push(value, Op::Slice(x, offset)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Upper-tail CVaR at level `alpha` of each row of `probs` over the
    /// ascending `support`: bins are scanned from the top, taking
    /// `w_i = min(p_i, remaining budget)` with the budget starting at `alpha`,
    /// and the result is `Σ w_i z_i / alpha`.
    pub fn cvar_upper(&mut self, probs: Var, support: &[T], alpha: T) -> Result<Var> {
        let pv = self.value(probs);
        let (m, c) = (pv.rows(), pv.cols());
        if c != support.len() {
            return Err(Error::contract(format!(
                "cvar: {c} probabilities for {} support points",
                support.len()
            )));
        }
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::contract(format!("cvar: alpha {alpha:?} not in (0, 1]")));
        }
        let mut takes_prob = vec![false; m * c];
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = pv.row(i);
            let mut budget = alpha;
            let mut acc = 0.0f64;
            for j in (0..c).rev() {
                let p = row[j];
                let w = if p <= budget {
                    takes_prob[i * c + j] = true;
                    p
                } else {
                    budget
                };
                acc += w.as_f64() * support[j].as_f64();
                budget = budget - w;
            }
            out.push(T::from_f64(acc / alpha.as_f64()));
        }
        let value = Tensor::new(row_shape(m, pv.shape()), out)?;
        Ok(self.push(
            value,
            Op::CvarUpper {
                probs,
                support: support.to_vec(),
                alpha,
                takes_prob,
            },
        ))
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                accumulate(grads, *a, av.shape(), |buf| {
                    // g[m,n] · bᵀ[n,k]
                    T::gemm(
                        m, n, k, g.data(), n as isize, 1, bv.data(), 1, n as isize, T::one(),
                        buf, k as isize, 1,
                    );
                });
                accumulate(grads, *b, bv.shape(), |buf| {
                    // aᵀ[k,m] · g[m,n]
                    T::gemm(
                        k, m, n, av.data(), 1, k as isize, g.data(), n as isize, 1, T::one(),
                        buf, n as isize, 1,
                    );
                });
            }
            Op::AddRow(x, row) => {
                let c = y.cols();
                accumulate(grads, *x, y.shape(), |buf| add_into(buf, g.data()));
                let rshape = self.value(*row).shape().to_vec();
                accumulate(grads, *row, &rshape, |buf| {
                    for (i, &gv) in g.data().iter().enumerate() {
                        buf[i % c] += gv;
                    }
                });
            }
            Op::MulRow(x, row) => {
                let c = y.cols();
                let (xv, rv) = (self.value(*x), self.value(*row));
                accumulate(grads, *x, y.shape(), |buf| {
                    for (i, (b, &gv)) in buf.iter_mut().zip(g.data()).enumerate() {
                        *b += gv * rv.data()[i % c];
                    }
                });
                accumulate(grads, *row, rv.shape(), |buf| {
                    for (i, (&gv, &xv)) in g.data().iter().zip(xv.data()).enumerate() {
                        buf[i % c] += gv * xv;
                    }
                });
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, y.shape(), |buf| add_into(buf, g.data()));
                accumulate(grads, *b, y.shape(), |buf| add_into(buf, g.data()));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, y.shape(), |buf| add_into(buf, g.data()));
                accumulate(grads, *b, y.shape(), |buf| {
                    buf.iter_mut().zip(g.data()).for_each(|(b, &gv)| *b -= gv)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, y.shape(), |buf| {
                    for ((o, &gv), &bv) in buf.iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gv * bv;
                    }
                });
                accumulate(grads, *b, y.shape(), |buf| {
                    for ((o, &gv), &av) in buf.iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, y.shape(), |buf| {
                    buf.iter_mut().zip(g.data()).for_each(|(b, &gv)| *b += gv * *c)
                });
            }
            Op::AddScalar(x) => accumulate(grads, *x, y.shape(), |buf| add_into(buf, g.data())),
            Op::Relu(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, y.shape(), |buf| {
                    for ((b, &gv), &xv) in buf.iter_mut().zip(g.data()).zip(xv.data()) {
                        if xv > T::zero() {
                            *b += gv;
                        }
                    }
                });
            }
            Op::Tanh(x) => accumulate(grads, *x, y.shape(), |buf| {
                for ((b, &gv), &yv) in buf.iter_mut().zip(g.data()).zip(y.data()) {
                    *b += gv * (T::one() - yv * yv);
                }
            }),
            Op::Exp(x) => accumulate(grads, *x, y.shape(), |buf| {
                for ((b, &gv), &yv) in buf.iter_mut().zip(g.data()).zip(y.data()) {
                    *b += gv * yv;
                }
            }),
            Op::Ln(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, y.shape(), |buf| {
                    for ((b, &gv), &xv) in buf.iter_mut().zip(g.data()).zip(xv.data()) {
                        *b += gv / xv;
                    }
                });
            }
            Op::Square(x) => {
                let xv = self.value(*x);
                let two = T::from_f64(2.0);
                accumulate(grads, *x, y.shape(), |buf| {
                    for ((b, &gv), &xv) in buf.iter_mut().zip(g.data()).zip(xv.data()) {
                        *b += two * xv * gv;
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g.item();
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, &shape, |buf| buf.iter_mut().for_each(|b| *b += gv));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let gv = g.item() / T::from_f64(xv.numel().max(1) as f64);
                accumulate(grads, *x, xv.shape(), |buf| {
                    buf.iter_mut().for_each(|b| *b += gv)
                });
            }
            Op::SumCols(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                accumulate(grads, *x, xv.shape(), |buf| {
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b += g.data()[i / c];
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q) = (av.cols(), bv.cols());
                accumulate(grads, *a, av.shape(), |buf| {
                    for i in 0..av.rows() {
                        let src = &g.data()[i * (p + q)..i * (p + q) + p];
                        add_into(&mut buf[i * p..(i + 1) * p], src);
                    }
                });
                accumulate(grads, *b, bv.shape(), |buf| {
                    for i in 0..bv.rows() {
                        let src = &g.data()[i * (p + q) + p..(i + 1) * (p + q)];
                        add_into(&mut buf[i * q..(i + 1) * q], src);
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                accumulate(grads, *x, y.shape(), |buf| {
                    for i in 0..y.rows() {
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let yr = y.row(i);
                        let gs: T = gr.iter().copied().sum();
                        for j in 0..c {
                            buf[i * c + j] += gr[j] - yr[j].exp() * gs;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let c = y.cols();
                accumulate(grads, *x, y.shape(), |buf| {
                    for i in 0..y.rows() {
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let yr = y.row(i);
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            buf[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSumExp(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                accumulate(grads, *x, xv.shape(), |buf| {
                    for i in 0..xv.rows() {
                        let sm = softmax_slice(xv.row(i));
                        for j in 0..c {
                            buf[i * c + j] += g.data()[i] * sm[j];
                        }
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                accumulate(grads, *x, y.shape(), |buf| {
                    for ((b, &gv), &xv) in buf.iter_mut().zip(g.data()).zip(xv.data()) {
                        if xv >= *lo && xv <= *hi {
                            *b += gv;
                        }
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let pick_a: Vec<bool> = av.data().iter().zip(bv.data()).map(|(x, y)| x <= y).collect();
                accumulate(grads, *a, y.shape(), |buf| {
                    for (i, b) in buf.iter_mut().enumerate() {
                        if pick_a[i] {
                            *b += g.data()[i];
                        }
                    }
                });
                accumulate(grads, *b, y.shape(), |buf| {
                    for (i, b) in buf.iter_mut().enumerate() {
                        if !pick_a[i] {
                            *b += g.data()[i];
                        }
                    }
                });
            }
            Op::Pick(x, idx) => {
                let xv = self.value(*x);
                let c = xv.cols();
                accumulate(grads, *x, xv.shape(), |buf| {
                    for (i, &j) in idx.iter().enumerate() {
                        buf[i * c + j] += g.data()[i];
                    }
                });
            }
            Op::Slice(x, offset) => {
                let shape = self.value(*x).shape().to_vec();
                let len = y.numel();
                accumulate(grads, *x, &shape, |buf| {
                    add_into(&mut buf[*offset..*offset + len], g.data())
                });
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, &shape, |buf| add_into(buf, g.data()));
            }
            Op::CvarUpper {
                probs,
                support,
                alpha,
                takes_prob,
            } => {
                let pv = self.value(*probs);
                let c = pv.cols();
                accumulate(grads, *probs, pv.shape(), |buf| {
                    for i in 0..pv.rows() {
                        let scale = g.data()[i] / *alpha;
                        // Reverse of the top-down scan: bin 0 was visited last.
                        let mut adj_budget_after = T::zero();
                        for j in 0..c {
                            let adj_w = scale * support[j] - adj_budget_after;
                            let adj_budget_before = if takes_prob[i * c + j] {
                                buf[i * c + j] += adj_w;
                                adj_budget_after
                            } else {
                                adj_budget_after + adj_w
                            };
                            adj_budget_after = adj_budget_before;
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn accumulate<T: Real>(
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
    f: impl FnOnce(&mut [T]),
) {
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
    f(slot.data_mut());
}

/// Stable `log Σ exp` of a slice.
pub fn logsumexp_slice<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).as_f64().exp()).sum();
    max + T::from_f64(s.ln())
}

/// Stable softmax of a slice.
pub fn softmax_slice<T: Real>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).as_f64().exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| T::from_f64(e / total)).collect()
}
