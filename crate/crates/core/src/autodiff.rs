//! Reverse-mode differentiation over whole-tensor operations.
//!
//! Network code is written once against [`Graph`]. [`Eager`] evaluates it
//! directly; [`Tape`] records every operation so that gradients of a scalar
//! output can be pulled back to any recorded value.

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::tensor::{
    add_bias_raw, avg_pool2_raw, conv2d_kernel_grad, conv2d_raw, nn_upsample2_raw, reverse_kernel_tensor, sum_to_bias,
    Tensor,
};

/// The operations the dynamics and the losses are built from.
///
/// Shapes are the caller's responsibility; a mismatch is a programming error
/// and panics.
pub trait Graph {
    type Value: Clone;

    /// A value that never receives a gradient.
    fn constant(&mut self, t: Tensor) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Self::Value;
    fn matmul(&mut self, a: &Self::Value, ta: bool, b: &Self::Value, tb: bool) -> Self::Value;
    fn conv2d(&mut self, x: &Self::Value, k: &Self::Value) -> Self::Value;
    fn reverse_kernel(&mut self, k: &Self::Value) -> Self::Value;
    fn avg_pool2(&mut self, x: &Self::Value) -> Self::Value;
    fn upsample2(&mut self, x: &Self::Value) -> Self::Value;
    /// Adds a bias indexed by axis 1 of a batched tensor.
    fn add_bias(&mut self, x: &Self::Value, b: &Self::Value) -> Self::Value;
    fn activation(&mut self, x: &Self::Value, kind: ActivationKind) -> Self::Value;
    fn inverse_activation(&mut self, x: &Self::Value, kind: ActivationKind) -> Self::Value;
    fn barrier(&mut self, x: &Self::Value, kind: ActivationKind) -> Self::Value;
    fn clip(&mut self, x: &Self::Value, lo: f64, hi: f64) -> Self::Value;
    /// Sum of all elements, as a `[1]` tensor.
    fn sum(&mut self, x: &Self::Value) -> Self::Value;
    /// Per-item sums of a batched tensor, shape `[n]`.
    fn sum_rows(&mut self, x: &Self::Value) -> Self::Value;
    /// `ln(1 + eˣ)` elementwise.
    fn softplus(&mut self, x: &Self::Value) -> Self::Value;
}

/// Overflow-safe `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.zip_map(b, f).expect("operand shapes")
}

fn sum_rows_raw(x: &Tensor) -> Tensor {
    let n = x.shape()[0];
    let stride = x.len() / n;
    Tensor::from_parts(vec![n], x.data().chunks(stride).map(|c| c.iter().sum()).collect())
}

fn matmul_raw(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    // Shapes are fixed by the architecture; overflow is caught by the
    // settling loop's finiteness check.
    Tensor::matmul_any(a, ta, b, tb).expect("matmul operand shapes")
}

/// Direct evaluation with no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Graph for Eager {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        zip(a, b, |x, y| x + y)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        zip(a, b, |x, y| x - y)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        zip(a, b, |x, y| x * y)
    }
    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        a.scale(c)
    }
    fn matmul(&mut self, a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
        matmul_raw(a, ta, b, tb)
    }
    fn conv2d(&mut self, x: &Tensor, k: &Tensor) -> Tensor {
        conv2d_raw(x, k)
    }
    fn reverse_kernel(&mut self, k: &Tensor) -> Tensor {
        reverse_kernel_tensor(k)
    }
    fn avg_pool2(&mut self, x: &Tensor) -> Tensor {
        avg_pool2_raw(x)
    }
    fn upsample2(&mut self, x: &Tensor) -> Tensor {
        nn_upsample2_raw(x)
    }
    fn add_bias(&mut self, x: &Tensor, b: &Tensor) -> Tensor {
        add_bias_raw(x, b)
    }
    fn activation(&mut self, x: &Tensor, kind: ActivationKind) -> Tensor {
        x.map(|v| kind.apply(v))
    }
    fn inverse_activation(&mut self, x: &Tensor, kind: ActivationKind) -> Tensor {
        x.map(|v| kind.inverse(v))
    }
    fn barrier(&mut self, x: &Tensor, kind: ActivationKind) -> Tensor {
        x.map(|v| kind.barrier(v))
    }
    fn clip(&mut self, x: &Tensor, lo: f64, hi: f64) -> Tensor {
        x.map(|v| v.clamp(lo, hi))
    }
    fn sum(&mut self, x: &Tensor) -> Tensor {
        Tensor::scalar(x.sum())
    }
    fn sum_rows(&mut self, x: &Tensor) -> Tensor {
        sum_rows_raw(x)
    }
    fn softplus(&mut self, x: &Tensor) -> Tensor {
        x.map(softplus)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul { a: usize, ta: bool, b: usize, tb: bool },
    Conv { x: usize, k: usize },
    ReverseKernel(usize),
    AvgPool(usize),
    Upsample(usize),
    AddBias { x: usize, b: usize },
    Activation(usize, ActivationKind),
    InverseActivation(usize, ActivationKind),
    Barrier(usize, ActivationKind),
    Clip { x: usize, lo: f64, hi: f64 },
    Sum(usize),
    SumRows(usize),
    Softplus(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// A tape is single-owner; independent batch items use independent tapes and
/// their gradients are summed afterwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an input whose gradient may be requested.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Gradients of the scalar `output` with respect to each of `inputs`.
    ///
    /// Inputs that `output` does not depend on get a zero gradient.
    pub fn grad(&self, output: Var, inputs: &[Var]) -> Result<Vec<Tensor>> {
        let out = output.0;
        if out >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("{output:?} is not on this tape")));
        }
        if self.nodes[out].value.len() != 1 {
            return Err(Error::Shape(format!(
                "gradient output must be scalar, got shape {:?}",
                self.nodes[out].value.shape()
            )));
        }
        if let Some(v) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::InvalidArgument(format!("{v:?} is not on this tape")));
        }

        let mut wanted = vec![false; out + 1];
        for v in inputs.iter().filter(|v| v.0 <= out) {
            wanted[v.0] = true;
        }
        let mut found: Vec<Option<Tensor>> = vec![None; out + 1];
        let mut adj: Vec<Option<Tensor>> = vec![None; out + 1];
        adj[out] = Some(Tensor::ones(self.nodes[out].value.shape()));

        for i in (0..=out).rev() {
            let Some(g) = adj[i].take() else { continue };
            if wanted[i] {
                found[i] = Some(g.clone());
            }
            self.backward_node(i, g, &mut adj);
        }

        Ok(inputs
            .iter()
            .map(|v| {
                found
                    .get(v.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
            })
            .collect())
    }

    fn backward_node(&self, i: usize, g: Tensor, adj: &mut [Option<Tensor>]) {
        let send = |adj: &mut [Option<Tensor>], j: usize, contrib: Tensor| {
            if !self.nodes[j].requires_grad {
                return;
            }
            match &mut adj[j] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let needs = |j: usize| self.nodes[j].requires_grad;
        let y = &self.nodes[i].value;

        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(a) {
                    send(adj, a, g.clone());
                }
                send(adj, b, g);
            }
            Op::Sub(a, b) => {
                if needs(b) {
                    send(adj, b, g.scale(-1.0));
                }
                send(adj, a, g);
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    send(adj, a, zip(&g, self.val(b), |u, v| u * v));
                }
                if needs(b) {
                    send(adj, b, zip(&g, self.val(a), |u, v| u * v));
                }
            }
            Op::Scale(a, c) => send(adj, a, g.scale(c)),
            Op::MatMul { a, ta, b, tb } => {
                // C = op(A)·op(B)
                if needs(a) {
                    let ga = if ta {
                        matmul_raw(self.val(b), tb, &g, true)
                    } else {
                        matmul_raw(&g, false, self.val(b), !tb)
                    };
                    send(adj, a, ga);
                }
                if needs(b) {
                    let gb = if tb {
                        matmul_raw(&g, true, self.val(a), ta)
                    } else {
                        matmul_raw(self.val(a), !ta, &g, false)
                    };
                    send(adj, b, gb);
                }
            }
            Op::Conv { x, k } => {
                if needs(x) {
                    let rk = reverse_kernel_tensor(self.val(k));
                    send(adj, x, conv2d_raw(&g, &rk));
                }
                if needs(k) {
                    send(adj, k, conv2d_kernel_grad(self.val(x), &g, self.val(k).shape()));
                }
            }
            Op::ReverseKernel(k) => send(adj, k, reverse_kernel_tensor(&g)),
            Op::AvgPool(x) => send(adj, x, nn_upsample2_raw(&g).scale(0.25)),
            Op::Upsample(x) => send(adj, x, avg_pool2_raw(&g).scale(4.0)),
            Op::AddBias { x, b } => {
                if needs(b) {
                    send(adj, b, sum_to_bias(&g));
                }
                send(adj, x, g);
            }
            Op::Activation(x, kind) => {
                send(adj, x, zip(&g, y, |u, v| u * kind.derivative_from_output(v)));
            }
            Op::InverseActivation(x, kind) => {
                send(adj, x, zip(&g, self.val(x), |u, v| u * kind.inverse_derivative(v)));
            }
            Op::Barrier(x, kind) => {
                send(adj, x, zip(&g, self.val(x), |u, v| u * kind.inverse(v)));
            }
            Op::Clip { x, lo, hi } => {
                send(
                    adj,
                    x,
                    zip(&g, self.val(x), |u, v| if v < lo || v > hi { 0.0 } else { u }),
                );
            }
            Op::Sum(x) => {
                let s = g.item();
                send(adj, x, Tensor::full(self.val(x).shape(), s));
            }
            Op::SumRows(x) => {
                let xv = self.val(x);
                let stride = xv.len() / xv.shape()[0];
                let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, stride)).collect();
                send(adj, x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::Softplus(x) => {
                send(adj, x, zip(&g, self.val(x), |u, v| u * sigmoid(v)));
            }
        }
    }
}

impl Graph for Tape {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = zip(self.val(a.0), self.val(b.0), |x, y| x + y);
        let rg = self.rg(&[a.0, b.0]);
        self.push(v, Op::Add(a.0, b.0), rg)
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = zip(self.val(a.0), self.val(b.0), |x, y| x - y);
        let rg = self.rg(&[a.0, b.0]);
        self.push(v, Op::Sub(a.0, b.0), rg)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let v = zip(self.val(a.0), self.val(b.0), |x, y| x * y);
        let rg = self.rg(&[a.0, b.0]);
        self.push(v, Op::Mul(a.0, b.0), rg)
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = self.val(a.0).scale(c);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Scale(a.0, c), rg)
    }
    fn matmul(&mut self, a: &Var, ta: bool, b: &Var, tb: bool) -> Var {
        let v = matmul_raw(self.val(a.0), ta, self.val(b.0), tb);
        let rg = self.rg(&[a.0, b.0]);
        self.push(v, Op::MatMul { a: a.0, ta, b: b.0, tb }, rg)
    }
    fn conv2d(&mut self, x: &Var, k: &Var) -> Var {
        let v = conv2d_raw(self.val(x.0), self.val(k.0));
        let rg = self.rg(&[x.0, k.0]);
        self.push(v, Op::Conv { x: x.0, k: k.0 }, rg)
    }
    fn reverse_kernel(&mut self, k: &Var) -> Var {
        let v = reverse_kernel_tensor(self.val(k.0));
        let rg = self.rg(&[k.0]);
        self.push(v, Op::ReverseKernel(k.0), rg)
    }
    fn avg_pool2(&mut self, x: &Var) -> Var {
        let v = avg_pool2_raw(self.val(x.0));
        let rg = self.rg(&[x.0]);
        self.push(v, Op::AvgPool(x.0), rg)
    }
    fn upsample2(&mut self, x: &Var) -> Var {
        let v = nn_upsample2_raw(self.val(x.0));
        let rg = self.rg(&[x.0]);
        self.push(v, Op::Upsample(x.0), rg)
    }
    fn add_bias(&mut self, x: &Var, b: &Var) -> Var {
        let v = add_bias_raw(self.val(x.0), self.val(b.0));
        let rg = self.rg(&[x.0, b.0]);
        self.push(v, Op::AddBias { x: x.0, b: b.0 }, rg)
    }
    fn activation(&mut self, x: &Var, kind: ActivationKind) -> Var {
        let v = self.val(x.0).map(|z| kind.apply(z));
        let rg = self.rg(&[x.0]);
        self.push(v, Op::Activation(x.0, kind), rg)
    }
    fn inverse_activation(&mut self, x: &Var, kind: ActivationKind) -> Var {
        let v = self.val(x.0).map(|z| kind.inverse(z));
        let rg = self.rg(&[x.0]);
        self.push(v, Op::InverseActivation(x.0, kind), rg)
    }
    fn barrier(&mut self, x: &Var, kind: ActivationKind) -> Var {
        let v = self.val(x.0).map(|z| kind.barrier(z));
        let rg = self.rg(&[x.0]);
        self.push(v, Op::Barrier(x.0, kind), rg)
    }
    fn clip(&mut self, x: &Var, lo: f64, hi: f64) -> Var {
        let v = self.val(x.0).map(|z| z.clamp(lo, hi));
        let rg = self.rg(&[x.0]);
        self.push(v, Op::Clip { x: x.0, lo, hi }, rg)
    }
    fn sum(&mut self, x: &Var) -> Var {
        let v = Tensor::scalar(self.val(x.0).sum());
        let rg = self.rg(&[x.0]);
        self.push(v, Op::Sum(x.0), rg)
    }
    fn sum_rows(&mut self, x: &Var) -> Var {
        let v = sum_rows_raw(self.val(x.0));
        let rg = self.rg(&[x.0]);
        self.push(v, Op::SumRows(x.0), rg)
    }
    fn softplus(&mut self, x: &Var) -> Var {
        let v = self.val(x.0).map(softplus);
        let rg = self.rg(&[x.0]);
        self.push(v, Op::Softplus(x.0), rg)
    }
}
