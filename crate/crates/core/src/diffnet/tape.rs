//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation is evaluated eagerly and appended to a [`Tape`]; calling
//! [`Tape::backward`] walks the tape once in reverse and accumulates adjoints.
//! Scalars are tensors of shape `[]`. The op set is closed: only what the
//! physics model and the residual network need.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{sigmoid_f64, Real};
use super::layers::conv_taps;
use super::tensor::Tensor;

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddConst(usize),
    MulConst(usize, f64),
    RDiv(usize),
    Exp(usize),
    Ln(usize),
    Sin(usize),
    Cos(usize),
    Asin(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Relu(usize),
    Sum(Vec<usize>),
    SumElements(usize),
    Concat(Vec<usize>),
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        x: usize,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(usize),
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    forward_flops: Cell<u64>,
    backward_flops: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, 0)
    }

    pub fn scalar_leaf(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Const, 0)
    }

    pub fn scalar_constant(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-add count of all forward evaluations recorded so far.
    pub fn forward_flops(&self) -> u64 {
        self.forward_flops.get()
    }

    /// Multiply-add count spent in the most recent backward passes.
    pub fn backward_flops(&self) -> u64 {
        self.backward_flops.get()
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, flops: u64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        self.forward_flops
            .set(self.forward_flops.get() + flops.max(1));
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn unary(&self, a: Var<'_>, f: impl Fn(f64) -> f64, op: Op) -> Var<'_> {
        let value = self.with_value(a.id, |t| t.map(&f));
        let n = value.len() as u64;
        self.push(value, op, n)
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'_> {
        assert!(std::ptr::eq(a.tape, b.tape), "operands recorded on different tapes");
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.id].value, &nodes[b.id].value);
            assert_eq!(
                ta.shape(),
                tb.shape(),
                "elementwise operands must share a shape"
            );
            Tensor::from_parts(
                ta.shape().to_vec(),
                ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
            )
        };
        let n = value.len() as u64;
        self.push(value, op, n)
    }

    /// Sum of equally shaped values.
    pub fn sum<'t>(&'t self, terms: &[Var<'t>]) -> Var<'t> {
        assert!(!terms.is_empty(), "sum of zero terms");
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[terms[0].id].value;
            let mut acc = vec![0.0; first.len()];
            for t in terms {
                let v = &nodes[t.id].value;
                assert_eq!(v.shape(), first.shape(), "sum operands must share a shape");
                for (a, x) in acc.iter_mut().zip(v.data()) {
                    *a += x;
                }
            }
            Tensor::from_parts(first.shape().to_vec(), acc)
        };
        let n = (value.len() * terms.len()) as u64;
        self.push(value, Op::Sum(terms.iter().map(|t| t.id).collect()), n)
    }

    /// Arithmetic mean of equally shaped values.
    pub fn mean<'t>(&'t self, terms: &[Var<'t>]) -> Var<'t> {
        self.sum(terms) * (1.0 / terms.len() as f64)
    }

    /// Reverse sweep seeded with ones at `output`.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(output.id + 1);
        grads.resize_with(output.id + 1, || None);
        grads[output.id] = Some(vec![1.0; nodes[output.id].value.len()]);
        let mut flops = 0u64;

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            flops += backprop(node, &nodes, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.backward_flops
            .set(self.backward_flops.get() + flops);
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl Fn(usize) -> f64) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    for (i, s) in slot.iter_mut().enumerate() {
        *s += f(i);
    }
}

// Returns the multiply-add count of this adjoint step.
fn backprop(node: &Node, nodes: &[Node], g: &[f64], grads: &mut [Option<Vec<f64>>]) -> u64 {
    let n = g.len();
    let val = |id: usize| nodes[id].value.data();
    let out = node.value.data();
    match &node.op {
        Op::Leaf | Op::Const => 0,
        Op::Add(a, b) => {
            accumulate(grads, *a, n, |i| g[i]);
            accumulate(grads, *b, n, |i| g[i]);
            2 * n as u64
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, n, |i| g[i]);
            accumulate(grads, *b, n, |i| -g[i]);
            2 * n as u64
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(grads, *a, n, |i| g[i] * vb[i]);
            accumulate(grads, *b, n, |i| g[i] * va[i]);
            2 * n as u64
        }
        Op::Div(a, b) => {
            let vb = val(*b);
            accumulate(grads, *a, n, |i| g[i] / vb[i]);
            accumulate(grads, *b, n, |i| -g[i] * out[i] / vb[i]);
            2 * n as u64
        }
        Op::Neg(a) => {
            accumulate(grads, *a, n, |i| -g[i]);
            n as u64
        }
        Op::AddConst(a) => {
            accumulate(grads, *a, n, |i| g[i]);
            n as u64
        }
        Op::MulConst(a, c) => {
            accumulate(grads, *a, n, |i| g[i] * c);
            n as u64
        }
        Op::RDiv(a) => {
            let va = val(*a);
            accumulate(grads, *a, n, |i| -g[i] * out[i] / va[i]);
            n as u64
        }
        Op::Exp(a) => {
            accumulate(grads, *a, n, |i| g[i] * out[i]);
            n as u64
        }
        Op::Ln(a) => {
            let va = val(*a);
            accumulate(grads, *a, n, |i| g[i] / va[i]);
            n as u64
        }
        Op::Sin(a) => {
            let va = val(*a);
            accumulate(grads, *a, n, |i| g[i] * va[i].cos());
            n as u64
        }
        Op::Cos(a) => {
            let va = val(*a);
            accumulate(grads, *a, n, |i| -g[i] * va[i].sin());
            n as u64
        }
        Op::Asin(a) => {
            let va = val(*a);
            accumulate(grads, *a, n, |i| g[i] / (1.0 - va[i] * va[i]).sqrt());
            n as u64
        }
        Op::Sqrt(a) => {
            accumulate(grads, *a, n, |i| 0.5 * g[i] / out[i]);
            n as u64
        }
        Op::Sigmoid(a) => {
            accumulate(grads, *a, n, |i| g[i] * out[i] * (1.0 - out[i]));
            n as u64
        }
        Op::Relu(a) => {
            let va = val(*a);
            accumulate(grads, *a, n, |i| if va[i] > 0.0 { g[i] } else { 0.0 });
            n as u64
        }
        Op::Sum(terms) => {
            for t in terms {
                accumulate(grads, *t, n, |i| g[i]);
            }
            (n * terms.len()) as u64
        }
        Op::SumElements(x) => {
            let len = nodes[*x].value.len();
            accumulate(grads, *x, len, |_| g[0]);
            len as u64
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[*p].value.len();
                accumulate(grads, *p, len, |i| g[offset + i]);
                offset += len;
            }
            n as u64
        }
        Op::Conv1d {
            x,
            w,
            b,
            stride,
            padding,
        } => {
            let xt = &nodes[*x].value;
            let wt = &nodes[*w].value;
            let (c_in, len) = (xt.shape()[0], xt.shape()[1]);
            let (c_out, k) = (wt.shape()[0], wt.shape()[2]);
            let l_out = node.value.shape()[1];
            let (xd, wd) = (xt.data(), wt.data());
            let mut dx = vec![0.0; xd.len()];
            let mut dw = vec![0.0; wd.len()];
            let mut db = vec![0.0; c_out];
            let (stride, padding) = (*stride, *padding);
            let taps: Vec<_> = (0..k).map(|kk| conv_taps(kk, stride, padding, len, l_out)).collect();
            for o in 0..c_out {
                let grow = &g[o * l_out..(o + 1) * l_out];
                for &go in grow {
                    db[o] += go;
                }
                for c in 0..c_in {
                    // descending taps visit each input position in ascending `j`
                    for kk in (0..k).rev() {
                        let wi = (o * c_in + c) * k + kk;
                        for j in taps[kk].clone() {
                            let go = grow[j];
                            if go == 0.0 {
                                continue;
                            }
                            let xi = c * len + j * stride + kk - padding;
                            dw[wi] += go * xd[xi];
                            dx[xi] += go * wd[wi];
                        }
                    }
                }
            }
            accumulate(grads, *x, dx.len(), |i| dx[i]);
            accumulate(grads, *w, dw.len(), |i| dw[i]);
            accumulate(grads, *b, db.len(), |i| db[i]);
            (2 * c_out * l_out * c_in * k + c_out * l_out) as u64
        }
        Op::MaxPool1d { x, argmax } => {
            let len = nodes[*x].value.len();
            let mut dx = vec![0.0; len];
            for (i, &src) in argmax.iter().enumerate() {
                dx[src] += g[i];
            }
            accumulate(grads, *x, len, |i| dx[i]);
            n as u64
        }
        Op::GlobalAvgPool(x) => {
            let shape = nodes[*x].value.shape();
            let len = shape[1];
            let scale = 1.0 / len as f64;
            accumulate(grads, *x, shape[0] * len, |i| g[i / len] * scale);
            (shape[0] * len) as u64
        }
        Op::Dense { x, w, b } => {
            let xd = val(*x);
            let wd = val(*w);
            let f_in = xd.len();
            let mut dx = vec![0.0; f_in];
            for (o, &go) in g.iter().enumerate() {
                let row = &wd[o * f_in..(o + 1) * f_in];
                for (d, &wv) in dx.iter_mut().zip(row) {
                    *d += go * wv;
                }
            }
            accumulate(grads, *x, f_in, |i| dx[i]);
            accumulate(grads, *w, n * f_in, |i| g[i / f_in] * xd[i % f_in]);
            accumulate(grads, *b, n, |i| g[i]);
            (2 * n * f_in + n) as u64
        }
        Op::Dropout { x, mask } => {
            accumulate(grads, *x, n, |i| g[i] * mask[i]);
            n as u64
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Adjoint of `v` with zeros filled in for unreachable values.
    pub fn dense(&self, v: Var<'_>) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; v.tape.with_value(v.id, Tensor::len)],
        }
    }

    pub fn scalar(&self, v: Var<'_>) -> f64 {
        self.get(v).map_or(0.0, |g| g[0])
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }

    /// First element; the whole value for scalars.
    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, |t| t.data()[0])
    }

    pub fn tensor(&self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn relu(self) -> Self {
        self.tape.unary(self, |x| x.max(0.0), Op::Relu(self.id))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, |a, b| a + b, Op::Add(self.id, rhs.id))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, |a, b| a - b, Op::Sub(self.id, rhs.id))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, |a, b| a * b, Op::Mul(self.id, rhs.id))
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        self.tape.binary(self, rhs, |a, b| a / b, Op::Div(self.id, rhs.id))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(self, |a| -a, Op::Neg(self.id))
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.tape.unary(self, |a| a + c, Op::AddConst(self.id))
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Self {
        self.tape.unary(self, |a| a - c, Op::AddConst(self.id))
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.tape.unary(self, |a| a * c, Op::MulConst(self.id, c))
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Self {
        // a / c is not a * (1/c) bitwise; record the quotient and its slope.
        self.tape.unary(self, |a| a / c, Op::MulConst(self.id, 1.0 / c))
    }
}

impl Real for Var<'_> {
    fn value(self) -> f64 {
        self.item()
    }
    fn constant(self, c: f64) -> Self {
        self.tape.scalar_constant(c)
    }
    fn exp(self) -> Self {
        self.tape.unary(self, f64::exp, Op::Exp(self.id))
    }
    fn ln(self) -> Self {
        self.tape.unary(self, f64::ln, Op::Ln(self.id))
    }
    fn sin(self) -> Self {
        self.tape.unary(self, f64::sin, Op::Sin(self.id))
    }
    fn cos(self) -> Self {
        self.tape.unary(self, f64::cos, Op::Cos(self.id))
    }
    fn asin(self) -> Self {
        self.tape.unary(self, f64::asin, Op::Asin(self.id))
    }
    fn sqrt(self) -> Self {
        self.tape.unary(self, f64::sqrt, Op::Sqrt(self.id))
    }
    fn sigmoid(self) -> Self {
        self.tape.unary(self, sigmoid_f64, Op::Sigmoid(self.id))
    }
    fn rdiv(self, c: f64) -> Self {
        self.tape.unary(self, |a| c / a, Op::RDiv(self.id))
    }
}
