//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every backward rule is written in terms of recorded tape operations, and
//! the set of operations is closed under taking adjoints (convolution and its
//! two adjoints form one family, resampling and its transpose another, and so
//! on). Calling [`Tape::backward`] with `create_graph = true` therefore
//! records the backward pass itself, and gradients of gradients come out of a
//! second ordinary backward sweep. This is what the R1 penalty needs.
//!
//! With `create_graph = false` the backward rules see detached copies of
//! their inputs, so the recorded gradient nodes are plain constants.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::kernels::{self, Resample};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Square(usize),
    Powf(usize, T),
    /// Elementwise product with a constant mask (leaky-relu, clamps).
    MaskMul(usize, Tensor<T>),
    Sigmoid(usize),
    Softplus(usize),
    /// `ln(clamp(sigmoid(x)))`; the mask is 1 where the clamp is inactive.
    LogSigmoidClamped(usize, Tensor<T>),
    SumAll(usize),
    Broadcast(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Slice {
        x: usize,
        start: usize,
    },
    Embed {
        x: usize,
        start: usize,
    },
    Conv {
        x: usize,
        w: usize,
        pad: usize,
    },
    ConvInputGrad {
        g: usize,
        w: usize,
        pad: usize,
    },
    ConvWeightGrad {
        x: usize,
        g: usize,
        pad: usize,
    },
    Resample {
        x: usize,
        kind: Resample,
        adjoint: bool,
    },
    Matmul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    ChannelScale {
        x: usize,
        s: usize,
    },
    ChannelDot(usize, usize),
    AddBias {
        x: usize,
        b: usize,
    },
    ChannelSum(usize),
    BroadcastChannels(usize),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Mul(a, b) | ChannelDot(a, b) => vec![*a, *b],
            Scale(a, _)
            | AddScalar(a)
            | Square(a)
            | Powf(a, _)
            | MaskMul(a, _)
            | Sigmoid(a)
            | Softplus(a)
            | LogSigmoidClamped(a, _)
            | SumAll(a)
            | Broadcast(a)
            | Reshape(a)
            | ChannelSum(a)
            | BroadcastChannels(a) => vec![*a],
            Concat(xs) => xs.clone(),
            Slice { x, .. } | Embed { x, .. } | Resample { x, .. } => vec![*x],
            Conv { x, w, .. } => vec![*x, *w],
            ConvInputGrad { g, w, .. } => vec![*g, *w],
            ConvWeightGrad { x, g, .. } => vec![*x, *g],
            Matmul { a, b, .. } => vec![*a, *b],
            ChannelScale { x, s } => vec![*x, *s],
            AddBias { x, b } => vec![*x, *b],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-writer record of tensor operations.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    second_order: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    /// A first-order tape.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            second_order: false,
        }
    }

    /// A tape whose backward pass may itself be recorded.
    pub fn second_order() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            second_order: true,
        }
    }

    pub fn is_second_order(&self) -> bool {
        self.second_order
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn value(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }

    /// Input handle seen by a backward rule.
    fn input(&self, id: usize, create_graph: bool) -> Var<'_, T> {
        if create_graph {
            self.var(id)
        } else {
            self.constant(self.value(id))
        }
    }

    /// Gradients of the scalar `output` with respect to every value it
    /// depends on. With `create_graph` the gradients are themselves
    /// differentiable tape values, which requires a second-order tape.
    pub fn backward<'t>(
        &'t self,
        output: Var<'t, T>,
        create_graph: bool,
    ) -> Result<Gradients<'t, T>> {
        if !std::ptr::eq(output.tape, self) {
            return Err(Error::Autodiff(
                "output recorded on a different tape".into(),
            ));
        }
        if create_graph && !self.second_order {
            return Err(Error::Autodiff(
                "tape not second-order capable; create it with Tape::second_order()".into(),
            ));
        }
        let out_val = self.value(output.id);
        if out_val.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar output, got shape {:?}",
                out_val.shape()
            )));
        }
        if !self.requires_grad(output.id) {
            return Err(Error::Autodiff(
                "output is detached: it does not depend on any leaf".into(),
            ));
        }
        let mut grads: Vec<Option<usize>> = vec![None; output.id + 1];
        grads[output.id] = Some(self.constant(Tensor::ones(out_val.shape())).id);
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id] else { continue };
            let op = {
                let nodes = self.nodes.borrow();
                if !nodes[id].requires_grad {
                    continue;
                }
                nodes[id].op.clone()
            };
            if matches!(op, Op::Leaf) {
                continue;
            }
            for (input, contribution) in self.vjp(id, &op, self.var(g), create_graph)? {
                if !self.requires_grad(input) {
                    continue;
                }
                grads[input] = Some(match grads[input] {
                    None => contribution.id,
                    Some(prev) => self.var(prev).add(contribution)?.id,
                });
            }
        }
        Ok(Gradients { tape: self, grads })
    }

    /// Vector-Jacobian products of node `id` for upstream gradient `g`.
    fn vjp<'t>(
        &'t self,
        id: usize,
        op: &Op<T>,
        g: Var<'t, T>,
        cg: bool,
    ) -> Result<Vec<(usize, Var<'t, T>)>> {
        let inp = |i: usize| self.input(i, cg);
        let shape_of = |i: usize| self.value(i).shape().to_vec();
        Ok(match *op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Mul(a, b) => vec![(a, g.mul(inp(b))?), (b, g.mul(inp(a))?)],
            Op::Scale(a, k) => vec![(a, g.scale_t(k))],
            Op::AddScalar(a) => vec![(a, g)],
            Op::Square(a) => vec![(a, g.mul(inp(a))?.scale(2.0))],
            Op::Powf(a, p) => {
                let d = inp(a).powf_t(p - T::one())?.scale_t(p);
                vec![(a, g.mul(d)?)]
            }
            Op::MaskMul(a, ref m) => vec![(a, g.mask_mul(m)?)],
            Op::Sigmoid(a) => {
                let s = inp(id);
                let ds = s.add(s.square().neg())?;
                vec![(a, g.mul(ds)?)]
            }
            Op::Softplus(a) => vec![(a, g.mul(inp(a).sigmoid())?)],
            Op::LogSigmoidClamped(a, ref m) => {
                let d = g.mul(inp(a).neg().sigmoid())?;
                vec![(a, d.mask_mul(m)?)]
            }
            Op::SumAll(a) => vec![(a, g.broadcast_to(&shape_of(a))?)],
            Op::Broadcast(a) => vec![(a, g.sum_all())],
            Op::Reshape(a) => vec![(a, g.reshape(&shape_of(a))?)],
            Op::Concat(ref xs) => {
                let mut off = 0;
                let mut out = Vec::with_capacity(xs.len());
                for &x in xs {
                    let c = shape_of(x)[1];
                    out.push((x, g.slice_channels(off, c)?));
                    off += c;
                }
                out
            }
            Op::Slice { x, start } => vec![(x, g.embed_channels(start, shape_of(x)[1])?)],
            Op::Embed { x, start } => vec![(x, g.slice_channels(start, shape_of(x)[1])?)],
            Op::Conv { x, w, pad } => {
                let k = shape_of(w)[2];
                vec![
                    (x, g.conv2d_input_grad(inp(w), pad)?),
                    (w, inp(x).conv2d_weight_grad(g, pad, k)?),
                ]
            }
            Op::ConvInputGrad { g: gy, w, pad } => {
                let k = shape_of(w)[2];
                vec![
                    (gy, g.conv_raw(inp(w), pad)?),
                    (w, g.conv2d_weight_grad(inp(gy), pad, k)?),
                ]
            }
            Op::ConvWeightGrad { x, g: gy, pad } => vec![
                (x, inp(gy).conv2d_input_grad(g, pad)?),
                (gy, inp(x).conv_raw(g, pad)?),
            ],
            Op::Resample { x, kind, adjoint } => vec![(x, g.resample(kind, !adjoint)?)],
            Op::Matmul { a, b, ta, tb } => {
                let ga = if ta {
                    inp(b).matmul(g, tb, true)?
                } else {
                    g.matmul(inp(b), false, !tb)?
                };
                let gb = if tb {
                    g.matmul(inp(a), true, ta)?
                } else {
                    inp(a).matmul(g, !ta, false)?
                };
                vec![(a, ga), (b, gb)]
            }
            Op::ChannelScale { x, s } => {
                vec![(x, g.channel_scale(inp(s))?), (s, g.channel_dot(inp(x))?)]
            }
            Op::ChannelDot(a, b) => {
                vec![(a, inp(b).channel_scale(g)?), (b, inp(a).channel_scale(g)?)]
            }
            Op::AddBias { x, b } => vec![(x, g), (b, g.channel_sum()?)],
            Op::ChannelSum(x) => vec![(x, g.broadcast_channels(&shape_of(x))?)],
            Op::BroadcastChannels(b) => vec![(b, g.channel_sum()?)],
        })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<'t, T> {
    tape: &'t Tape<T>,
    grads: Vec<Option<usize>>,
}

impl<'t, T: Scalar> Gradients<'t, T> {
    /// Gradient as a tape value; `None` when `v` does not influence the output.
    pub fn get(&self, v: Var<'t, T>) -> Option<Var<'t, T>> {
        self.grads
            .get(v.id)
            .copied()
            .flatten()
            .map(|id| self.tape.var(id))
    }

    /// Gradient tensor, zeros when `v` does not influence the output.
    pub fn tensor(&self, v: Var<'t, T>) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.value(),
            None => Tensor::zeros(&v.shape()),
        }
    }
}

/// `‖∂d_out/∂x‖²` as a differentiable scalar. Needs a second-order tape.
pub fn grad_norm_sq<'t, T: Scalar>(
    tape: &'t Tape<T>,
    d_out: Var<'t, T>,
    x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    if !tape.is_second_order() {
        return Err(Error::Autodiff(
            "grad_norm_sq requires a second-order tape".into(),
        ));
    }
    if !tape.requires_grad(d_out.id) {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let grads = tape.backward(d_out, true)?;
    match grads.get(x) {
        Some(g) => Ok(g.square().sum_all()),
        None => Ok(tape.constant(Tensor::scalar(T::zero()))),
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

#[allow(clippy::should_implement_trait)]
impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// The same value as a constant (gradient-stopped).
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }

    fn rec(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        self.tape.record(value, op)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let v = a.zip_map(&b, |x, y| x + y)?;
        Ok(self.rec(v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.add(other.neg())
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let v = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.rec(v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, k: f64) -> Var<'t, T> {
        self.scale_t(T::of(k))
    }

    fn scale_t(self, k: T) -> Var<'t, T> {
        let v = self.value().map(|x| x * k);
        self.rec(v, Op::Scale(self.id, k))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, k: f64) -> Var<'t, T> {
        let k = T::of(k);
        let v = self.value().map(|x| x + k);
        self.rec(v, Op::AddScalar(self.id))
    }

    pub fn square(self) -> Var<'t, T> {
        let v = self.value().map(|x| x * x);
        self.rec(v, Op::Square(self.id))
    }

    pub fn powf(self, p: f64) -> Result<Var<'t, T>> {
        self.powf_t(T::of(p))
    }

    fn powf_t(self, p: T) -> Result<Var<'t, T>> {
        let v = self.value().map(|x| x.powf(p));
        v.check_finite("powf")?;
        Ok(self.rec(v, Op::Powf(self.id, p)))
    }

    /// `sqrt(x + eps)`.
    pub fn sqrt_eps(self, eps: f64) -> Result<Var<'t, T>> {
        self.add_scalar(eps).powf(0.5)
    }

    pub fn mask_mul(self, mask: &Tensor<T>) -> Result<Var<'t, T>> {
        let v = self.value().zip_map(mask, |x, m| x * m)?;
        Ok(self.rec(v, Op::MaskMul(self.id, mask.clone())))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t, T> {
        let slope = T::of(slope);
        let mask = self
            .value()
            .map(|x| if x >= T::zero() { T::one() } else { slope });
        self.mask_mul(&mask).expect("mask has the input's shape")
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let v = self.value().map(sigmoid);
        self.rec(v, Op::Sigmoid(self.id))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t, T> {
        let v = self.value().map(softplus);
        self.rec(v, Op::Softplus(self.id))
    }

    /// `ln(clamp(sigmoid(x), lo, 1 - lo))`.
    pub fn log_sigmoid_clamped(self, lo: f64) -> Var<'t, T> {
        let (lo, hi) = (T::of(lo), T::one() - T::of(lo));
        let x = self.value();
        let mask = x.map(|v| {
            let p = sigmoid(v);
            if p > lo && p < hi {
                T::one()
            } else {
                T::zero()
            }
        });
        let v = x.map(|v| sigmoid(v).max(lo).min(hi).ln());
        self.rec(v, Op::LogSigmoidClamped(self.id, mask))
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let s: T = self.value().data().iter().copied().sum();
        self.rec(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = self.value().numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Broadcasts a single-element value to `shape`.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value();
        if v.numel() != 1 {
            return Err(Error::shape(
                "broadcast_to",
                format!("{:?} is not scalar", v.shape()),
            ));
        }
        let t = Tensor::full(shape, v.item());
        Ok(self.rec(t, Op::Broadcast(self.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().reshape(shape)?;
        Ok(self.rec(v, Op::Reshape(self.id)))
    }

    pub fn slice_channels(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = kernels::slice_channels(&self.value(), start, len)?;
        Ok(self.rec(v, Op::Slice { x: self.id, start }))
    }

    fn embed_channels(self, start: usize, total: usize) -> Result<Var<'t, T>> {
        let v = kernels::embed_channels(&self.value(), start, total)?;
        Ok(self.rec(v, Op::Embed { x: self.id, start }))
    }

    /// Stride-1 convolution with optional per-output-channel bias.
    /// Supports 1x1 and 3x3 kernels with padding 0 or 1.
    pub fn conv2d(self, w: Var<'t, T>, bias: Option<Var<'t, T>>, pad: usize) -> Result<Var<'t, T>> {
        let ws = w.shape();
        if ws.len() != 4 || ws[2] != ws[3] || !(ws[2] == 1 || ws[2] == 3) {
            return Err(Error::Config(format!(
                "conv2d supports 1x1 and 3x3 kernels, got weight {ws:?}"
            )));
        }
        if pad > 1 {
            return Err(Error::Config(format!(
                "conv2d padding must be 0 or 1, got {pad}"
            )));
        }
        self.value().check_finite("conv2d input")?;
        let y = self.conv_raw(w, pad)?;
        match bias {
            Some(b) => y.add_bias(b),
            None => Ok(y),
        }
    }

    fn conv_raw(self, w: Var<'t, T>, pad: usize) -> Result<Var<'t, T>> {
        let v = kernels::conv2d(&self.value(), &w.value(), None, pad)?;
        Ok(self.rec(
            v,
            Op::Conv {
                x: self.id,
                w: w.id,
                pad,
            },
        ))
    }

    /// `self` is an output-shaped gradient.
    pub fn conv2d_input_grad(self, w: Var<'t, T>, pad: usize) -> Result<Var<'t, T>> {
        let v = kernels::conv2d_input_grad(&self.value(), &w.value(), pad)?;
        Ok(self.rec(
            v,
            Op::ConvInputGrad {
                g: self.id,
                w: w.id,
                pad,
            },
        ))
    }

    /// `self` is the convolution input, `g` an output-shaped gradient.
    pub fn conv2d_weight_grad(
        self,
        g: Var<'t, T>,
        pad: usize,
        kernel: usize,
    ) -> Result<Var<'t, T>> {
        let v = kernels::conv2d_weight_grad(&self.value(), &g.value(), pad, kernel)?;
        Ok(self.rec(
            v,
            Op::ConvWeightGrad {
                x: self.id,
                g: g.id,
                pad,
            },
        ))
    }

    pub fn resample(self, kind: Resample, adjoint: bool) -> Result<Var<'t, T>> {
        let v = kernels::resample(&self.value(), kind, adjoint)?;
        Ok(self.rec(
            v,
            Op::Resample {
                x: self.id,
                kind,
                adjoint,
            },
        ))
    }

    pub fn matmul(self, other: Var<'t, T>, ta: bool, tb: bool) -> Result<Var<'t, T>> {
        let v = kernels::matmul(&self.value(), &other.value(), ta, tb)?;
        Ok(self.rec(
            v,
            Op::Matmul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        ))
    }

    /// Multiplies channel `(n, c)` by `s[n, c]`.
    pub fn channel_scale(self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = kernels::channel_scale(&self.value(), &s.value())?;
        Ok(self.rec(
            v,
            Op::ChannelScale {
                x: self.id,
                s: s.id,
            },
        ))
    }

    pub fn channel_dot(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = kernels::channel_dot(&self.value(), &other.value())?;
        Ok(self.rec(v, Op::ChannelDot(self.id, other.id)))
    }

    pub fn add_bias(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = kernels::add_bias(&self.value(), &b.value())?;
        Ok(self.rec(
            v,
            Op::AddBias {
                x: self.id,
                b: b.id,
            },
        ))
    }

    pub fn channel_sum(self) -> Result<Var<'t, T>> {
        let v = kernels::channel_sum(&self.value())?;
        Ok(self.rec(v, Op::ChannelSum(self.id)))
    }

    pub fn broadcast_channels(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = kernels::broadcast_channels(&self.value(), shape)?;
        Ok(self.rec(v, Op::BroadcastChannels(self.id)))
    }
}

/// Stacks values along the channel axis in argument order.
pub fn concat_channels<'t, T: Scalar>(xs: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let vals: Vec<Tensor<T>> = xs.iter().map(|x| x.value()).collect();
    let refs: Vec<&Tensor<T>> = vals.iter().collect();
    let v = kernels::concat_channels(&refs)?;
    Ok(first.rec(v, Op::Concat(xs.iter().map(|x| x.id).collect())))
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
