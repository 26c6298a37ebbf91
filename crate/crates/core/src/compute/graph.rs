//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients only for nodes that
//! depend on a trainable leaf.

use indexmap::IndexMap;

use crate::compute::kernels::{self, UpsampleMode};
use crate::compute::{ParamStore, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A differentiable op defined outside this module (used by the losses).
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients w.r.t. each input, given the upstream gradient of the output.
    /// Entries for inputs with `needs[i] == false` may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>>;

    /// Distance of the inputs from the nearest point where the op is not
    /// differentiable, if it has any. See [`Graph::kink_margin`].
    fn kink_margin(&self, _inputs: &[&Tensor<T>]) -> Option<f64> {
        None
    }
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        mode: UpsampleMode,
    },
    Downsample(Var),
    Concat(Var, Var),
    SliceChannels {
        input: Var,
        start: usize,
    },
    Add(Var, Var),
    Clamp {
        input: Var,
        lo: T,
        hi: T,
    },
    Reshape(Var),
    WeightedSum(Vec<(Var, T)>),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Parameters of one store bound into a graph as leaves.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
    trainable: bool,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`Graph::backward`] target w.r.t. `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies every parameter of `store` into the graph. Frozen bindings
    /// behave as constants.
    pub fn bind(&mut self, store: &ParamStore<T>, trainable: bool) -> Bound {
        let mut vars = IndexMap::with_capacity(store.len());
        for (name, p) in store.iter() {
            let mut value = p.clone();
            value.clear_grad();
            let v = self.push(value, Op::Leaf, trainable);
            vars.insert(name.to_string(), v);
        }
        Bound { vars, trainable }
    }

    /// Adds the gradients of a trainable binding into `store`.
    pub fn accumulate_grads(&self, bound: &Bound, store: &mut ParamStore<T>) -> Result<()> {
        if !bound.trainable {
            return Ok(());
        }
        for (name, &v) in &bound.vars {
            match self.grad(v) {
                Some(g) => store.accumulate_grad(name, g)?,
                None => {
                    // unreachable from the loss: contributes zero
                    store.get_mut(name)?.ensure_grad();
                }
            }
        }
        Ok(())
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> Result<Var> {
        let y = kernels::conv2d(
            self.value(input),
            self.value(weight),
            self.value(bias),
            padding,
        )?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            y,
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            },
            needs,
        ))
    }

    /// Affine layer over each batch item flattened to a vector.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = kernels::linear(self.value(input), self.value(weight), self.value(bias))?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            y,
            Op::Linear {
                input,
                weight,
                bias,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(T::tanh);
        let needs = self.needs(x);
        self.push(y, Op::Tanh(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid_scalar);
        let needs = self.needs(x);
        self.push(y, Op::Sigmoid(x), needs)
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = kernels::maxpool2x2(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::MaxPool { input: x, argmax }, needs))
    }

    pub fn upsample(
        &mut self,
        x: Var,
        target_h: usize,
        target_w: usize,
        mode: UpsampleMode,
    ) -> Result<Var> {
        let y = kernels::upsample(self.value(x), target_h, target_w, mode)?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Upsample { input: x, mode }, needs))
    }

    pub fn downsample_avg2x(&mut self, x: Var) -> Result<Var> {
        let y = kernels::downsample_avg2x(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Downsample(x), needs))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Concat(a, b), needs))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = self.value(x).slice_channels(start, len)?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::SliceChannels { input: x, start }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err!(
                "cannot add {:?} and {:?}",
                va.shape(),
                vb.shape()
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let y = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), needs))
    }

    /// Clamps into `[lo, hi]`; gradient passes through inside the range only.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let y = self.value(x).map(|v| v.max(lo).min(hi));
        let needs = self.needs(x);
        self.push(y, Op::Clamp { input: x, lo, hi }, needs)
    }

    /// Flattens every batch item: `(b, ...) -> (b, n)`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let b = *v
            .shape()
            .first()
            .ok_or_else(|| shape_err!("cannot flatten a rank-0 tensor"))?;
        let n = v.len().checked_div(b).unwrap_or(0);
        let y = v.clone().reshape(vec![b, n])?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Reshape(x), needs))
    }

    /// `sum_i w_i * x_i` over single-element nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            total = total + w * self.value(v).item()?;
        }
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum(terms.to_vec()),
            needs,
        ))
    }

    /// Records a custom op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            needs,
        )
    }

    /// Smallest distance, in input units, between any recorded value and a
    /// point where its op is not differentiable: ReLU inputs from zero, clamp
    /// inputs from the bounds, the gap between the two largest entries of a
    /// pooling window, and whatever custom ops report. `None` when the graph
    /// has no such op. Finite-difference checks are only meaningful when the
    /// perturbation cannot move a value across this margin.
    pub fn kink_margin(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut see = |m: f64| best = Some(best.map_or(m, |b| b.min(m)));
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        see(v.as_f64().abs());
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    for &v in self.value(*input).data() {
                        see((v - *lo).abs().min((v - *hi).abs()).as_f64());
                    }
                }
                Op::MaxPool { input, .. } => {
                    if let Some(m) = pool_gap(self.value(*input)) {
                        see(m);
                    }
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                    if let Some(m) = op.kink_margin(&vals) {
                        see(m);
                    }
                }
                _ => {}
            }
        }
        best
    }

    /// Reverse pass from the single-element node `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.nodes.len();
        if self.value(loss).len() != 1 {
            return Err(shape_err!(
                "backward target must hold one element, has shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                grads[i] = Some(g);
                continue;
            }
            let contributions = self.node_backward(i, &g)?;
            grads[i] = Some(g);
            for (v, d) in contributions {
                accumulate(&mut grads[v.0], d);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            } => {
                let need_x = self.needs(*input);
                let r = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    *padding,
                    g,
                    need_x,
                )?;
                if let Some(dx) = r.input {
                    out.push((*input, dx));
                }
                if self.needs(*weight) {
                    out.push((*weight, r.weight));
                }
                if self.needs(*bias) {
                    out.push((*bias, r.bias));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let need_x = self.needs(*input);
                let r = kernels::linear_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    g,
                    need_x,
                )?;
                if let Some(dx) = r.input {
                    out.push((*input, dx));
                }
                if self.needs(*weight) {
                    out.push((*weight, r.weight));
                }
                if self.needs(*bias) {
                    out.push((*bias, r.bias));
                }
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*x, d));
            }
            Op::Tanh(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * (T::one() - y * y))
                    .collect();
                out.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                out.push((*x, d));
            }
            Op::MaxPool { input, argmax } => {
                let mut d = vec![T::zero(); self.value(*input).len()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    d[idx] = d[idx] + gv;
                }
                out.push((*input, d));
            }
            Op::Upsample { input, mode } => {
                let (_, _, th, tw) = node.value.dims4()?;
                out.push((
                    *input,
                    kernels::upsample_backward(self.value(*input).shape(), th, tw, *mode, g),
                ));
            }
            Op::Downsample(x) => {
                out.push((
                    *x,
                    kernels::downsample_avg2x_backward(self.value(*x).shape(), g),
                ));
            }
            Op::Concat(a, b) => {
                let (batch, ca, h, w) = self.value(*a).dims4()?;
                let cb = self.value(*b).dims4()?.1;
                let (ga, gb) = kernels::split_channels(g, batch, ca, cb, h * w);
                if self.needs(*a) {
                    out.push((*a, ga));
                }
                if self.needs(*b) {
                    out.push((*b, gb));
                }
            }
            Op::SliceChannels { input, start } => {
                let (batch, c, h, w) = self.value(*input).dims4()?;
                let len = node.value.dims4()?.1;
                let plane = h * w;
                let mut d = vec![T::zero(); batch * c * plane];
                for bi in 0..batch {
                    let dst = (bi * c + start) * plane;
                    d[dst..dst + len * plane]
                        .copy_from_slice(&g[bi * len * plane..(bi + 1) * len * plane]);
                }
                out.push((*input, d));
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Clamp { input, lo, hi } => {
                let d = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v >= *lo && v <= *hi { gv } else { T::zero() })
                    .collect();
                out.push((*input, d));
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if self.needs(v) {
                        out.push((v, vec![w * g[0]]));
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs(v)).collect();
                let ds = op.backward(&values, &node.value, g, &needs)?;
                for ((&v, d), need) in inputs.iter().zip(ds).zip(needs) {
                    if let (true, Some(d)) = (need, d) {
                        if d.len() != self.value(v).len() {
                            return Err(shape_err!(
                                "{} returned a gradient of the wrong size",
                                op.name()
                            ));
                        }
                        out.push((v, d));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, d: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(d) {
                *a = *a + v;
            }
        }
        None => *slot = Some(d),
    }
}

fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Smallest gap between the largest and second largest entry of any 2x2
/// pooling window. Windows whose maximum is exactly zero are skipped: below
/// a ReLU those entries are clamped and stay tied while the ReLU margin
/// holds.
fn pool_gap<T: Scalar>(x: &Tensor<T>) -> Option<f64> {
    let (b, c, h, w) = x.dims4().ok()?;
    let d = x.data();
    let mut best: Option<f64> = None;
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                let mut win = [0.0f64; 4];
                for (k, slot) in win.iter_mut().enumerate() {
                    *slot = d[base + (2 * i + k / 2) * w + 2 * j + k % 2].as_f64();
                }
                win.sort_by(|a, b| b.total_cmp(a));
                if win[0] == 0.0 {
                    continue;
                }
                let gap = win[0] - win[1];
                best = Some(best.map_or(gap, |m: f64| m.min(gap)));
            }
        }
    }
    best
}
