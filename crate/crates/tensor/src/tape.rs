//! The computation record: every differentiable operation appends a node
//! holding its output value and whatever it needs to replay its adjoint.
//! [`Tape::backward`] walks the nodes in reverse insertion order, so each
//! operation is visited once.

use crate::conv::ConvGeom;
use crate::ops::Activation;
use crate::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate gradient corruption, used to prove the gradient checker
/// actually catches broken adjoints.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Conv2dBackward,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchedConv2d {
        input: Var,
        kernels: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Square(Var),
    Softplus(Var),
    Reshape(Var),
    ConcatChannels(Vec<Var>),
    GlobalAvgPool(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Gram {
        input: Var,
        scale: T,
    },
    ChannelAffine {
        input: Var,
        scale: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records operations for reverse-mode differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    pub(crate) fault: Option<Fault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Handles from before the call are invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// A differentiable leaf (parameter or input we want gradients for).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// A constant copy of `v`, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Accumulates `d loss / d leaf` into every differentiable leaf reachable
    /// from `loss`. Gradients add up across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                leaf_grads.push((i, g));
            } else {
                self.backprop(i, &g, &mut grads);
            }
        }
        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradient accumulator for `v`, or `None` when `v` needs no gradient.
    pub(crate) fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.to_vec())).data_mut())
    }

    fn backprop(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv2d_backward(*input, *weight, *bias, geom, g, grads),
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv_transpose2d_backward(*input, *weight, *bias, geom, g, grads),
            Op::BatchedConv2d { input, kernels, geom } => self.batched_conv2d_backward(*input, *kernels, geom, g, grads),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => self.batchnorm_backward(*input, *gamma, *beta, xhat, inv_std, *train, g, grads),
            Op::Activation { input, kind } => self.activation_backward(*input, *kind, out, g, grads),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        add_into(d, g.data());
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    add_into(d, g.data());
                }
                if let Some(d) = self.slot(grads, *b) {
                    for (d, &x) in d.iter_mut().zip(g.data()) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, &x), &y) in d.iter_mut().zip(g.data()).zip(bv) {
                        *d += x * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((d, &x), &y) in d.iter_mut().zip(g.data()).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = self.slot(grads, *a) {
                    for (d, &x) in d.iter_mut().zip(g.data()) {
                        *d += x * *c;
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.item();
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).numel() as f64);
                let s = g.item() / n;
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, &gy), &x) in d.iter_mut().zip(g.data()).zip(x) {
                        if x > T::zero() {
                            *d += gy;
                        } else if x < T::zero() {
                            *d -= gy;
                        }
                    }
                }
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let two = T::lit(2.0);
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, &gy), &x) in d.iter_mut().zip(g.data()).zip(x) {
                        *d += two * x * gy;
                    }
                }
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, &gy), &x) in d.iter_mut().zip(g.data()).zip(x) {
                        *d += gy * crate::ops::sigmoid(x);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    add_into(d, g.data());
                }
            }
            Op::ConcatChannels(parts) => self.concat_backward(parts, g, grads),
            Op::GlobalAvgPool(a) => self.global_avg_pool_backward(*a, g, grads),
            Op::MaxPool2 { input, argmax } => {
                if let Some(d) = self.slot(grads, *input) {
                    for (&src, &gy) in argmax.iter().zip(g.data()) {
                        d[src] += gy;
                    }
                }
            }
            Op::Gram { input, scale } => self.gram_backward(*input, *scale, g, grads),
            Op::ChannelAffine { input, scale } => {
                let [n, c, h, w] = self.value(*input).dims4("channel_affine").expect("rank checked at record time");
                if let Some(d) = self.slot(grads, *input) {
                    let hw = h * w;
                    for b in 0..n {
                        for ch in 0..c {
                            let o = (b * c + ch) * hw;
                            for k in o..o + hw {
                                d[k] += g.data()[k] * scale[ch];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([2, 2]));
        let y = tape.square(x);
        assert!(matches!(tape.backward(y), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn sum_gives_unit_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn([3], |i| i as f64));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gives_twice_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([3], vec![-1.5, 0.25, 2.0]).unwrap());
        let sq = tape.square(x);
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[-3.0, 0.5, 4.0]);
    }

    #[test]
    fn repeated_backward_doubles_gradient_exactly() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([2], vec![0.3, -0.7]).unwrap());
        let y = tape.mul(x, x).unwrap();
        let t = tape.tanh(y);
        let s = tape.sum(t);
        tape.backward(s).unwrap();
        let once = tape.grad(x).unwrap().clone();
        tape.backward(s).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::ones([2]));
        let x = tape.leaf(Tensor::ones([2]));
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert!(tape.grad(x).is_some());
    }

    #[test]
    fn cleared_tape_matches_fresh_tape() {
        let run = |tape: &mut Tape<f64>| {
            let x = tape.leaf(Tensor::new([3], vec![0.1, -0.4, 0.9]).unwrap());
            let y = tape.sigmoid(x);
            let s = tape.mean(y);
            tape.backward(s).unwrap();
            (tape.value(s).item(), tape.grad(x).unwrap().clone())
        };
        let mut reused = Tape::new();
        let _ = run(&mut reused);
        reused.clear();
        let a = run(&mut reused);
        let b = run(&mut Tape::new());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
