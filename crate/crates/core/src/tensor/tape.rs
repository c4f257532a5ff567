use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::conv::{self, ConvGeom, PoolGeom};
use super::value::{ensure_finite, Tensor};
use super::{loss, norm, ops};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddBias { x: Var, bias: Var },
    Elu(Var),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Reshape(Var),
    AvgPool2d { x: Var, geom: PoolGeom },
    Dropout { x: Var, mask: Vec<S> },
    Conv2d { x: Var, w: Var, geom: ConvGeom, cols: Vec<Vec<S>> },
    BatchNorm(norm::NormCache<S>),
    SoftmaxCrossEntropy(loss::CeCache<S>),
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<S>,
}

/// Append-only record of a computation. Inputs of every node precede it, so a
/// single reverse sweep yields all gradients.
pub struct Tape<S> {
    pub(crate) nodes: Vec<Node<S>>,
    leaf_grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers of one backward sweep, indexed by node.
pub(crate) struct GradBuf<'a, S> {
    nodes: &'a [Node<S>],
    slots: Vec<Option<Vec<S>>>,
}

impl<'a, S: Scalar> GradBuf<'a, S> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn value(&self, v: Var) -> &'a Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Adds `delta` to the gradient of `v`.
    pub(crate) fn add(&mut self, v: Var, delta: Vec<S>) {
        debug_assert_eq!(delta.len(), self.nodes[v.0].value.numel());
        match &mut self.slots[v.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
            slot => *slot = Some(delta),
        }
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are collected only for leaves with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Result<Var> {
        ensure_finite("leaf", value.data())?;
        Ok(self.push_node(value, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let g = self.leaf_grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_node(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a derived value; it requires grad when any input does.
    pub(crate) fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<S>,
        inputs: &[Var],
        op: Op<S>,
    ) -> Result<Var> {
        ensure_finite(op_name, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, requires_grad, op))
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::shape("tape", format!("variable {} is not on this tape", v.0)))
        }
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, has {numel} elements"),
            ));
        }
        let mut buf = GradBuf { nodes: &self.nodes, slots: vec![None; loss.0 + 1] };
        buf.slots[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = buf.slots[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += *d),
                    slot => *slot = Some(g),
                },
                op => backward_op(op, &node.value, &g, &mut buf),
            }
        }
        for (i, g) in self.leaf_grads.iter().enumerate() {
            if let Some(g) = g {
                ensure_finite(&format!("gradient of node {i}"), g)?;
            }
        }
        Ok(())
    }
}

fn backward_op<S: Scalar>(op: &Op<S>, out: &Tensor<S>, g: &[S], buf: &mut GradBuf<'_, S>) {
    match op {
        Op::Leaf => unreachable!("leaves are handled by the sweep"),
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if buf.wants(v) {
                    buf.add(v, g.to_vec());
                }
            }
        }
        Op::Sub(a, b) => {
            if buf.wants(*a) {
                buf.add(*a, g.to_vec());
            }
            if buf.wants(*b) {
                buf.add(*b, g.iter().map(|&x| -x).collect());
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (buf.value(*a).data(), buf.value(*b).data());
            if buf.wants(*a) {
                buf.add(*a, g.iter().zip(bv).map(|(&g, &b)| g * b).collect());
            }
            if buf.wants(*b) {
                buf.add(*b, g.iter().zip(av).map(|(&g, &a)| g * a).collect());
            }
        }
        Op::Scale(x, c) => {
            if buf.wants(*x) {
                buf.add(*x, g.iter().map(|&g| g * *c).collect());
            }
        }
        Op::AddBias { x, bias } => ops::add_bias_backward(*x, *bias, g, buf),
        Op::Elu(x) => {
            if buf.wants(*x) {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| if y > S::zero() { g } else { g * (y + S::one()) })
                    .collect();
                buf.add(*x, d);
            }
        }
        Op::Relu(x) => {
            if buf.wants(*x) {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| if y > S::zero() { g } else { S::zero() })
                    .collect();
                buf.add(*x, d);
            }
        }
        Op::Square(x) => {
            if buf.wants(*x) {
                let two = S::of(2.0);
                let xv = buf.value(*x).data();
                buf.add(*x, g.iter().zip(xv).map(|(&g, &x)| two * x * g).collect());
            }
        }
        Op::Sqrt(x) => {
            if buf.wants(*x) {
                let half = S::of(0.5);
                buf.add(*x, g.iter().zip(out.data()).map(|(&g, &y)| g * half / y).collect());
            }
        }
        Op::Log(x) => {
            if buf.wants(*x) {
                let xv = buf.value(*x).data();
                buf.add(*x, g.iter().zip(xv).map(|(&g, &x)| g / x).collect());
            }
        }
        Op::Sum(x) => {
            if buf.wants(*x) {
                let n = buf.value(*x).numel();
                buf.add(*x, vec![g[0]; n]);
            }
        }
        Op::Mean(x) => {
            if buf.wants(*x) {
                let n = buf.value(*x).numel();
                buf.add(*x, vec![g[0] / S::of(n as f64); n]);
            }
        }
        Op::MatMul(a, b) => ops::matmul_backward(*a, *b, g, buf),
        Op::Reshape(x) => {
            if buf.wants(*x) {
                buf.add(*x, g.to_vec());
            }
        }
        Op::AvgPool2d { x, geom } => conv::avg_pool_backward(*x, geom, g, buf),
        Op::Dropout { x, mask } => {
            if buf.wants(*x) {
                buf.add(*x, g.iter().zip(mask).map(|(&g, &m)| g * m).collect());
            }
        }
        Op::Conv2d { x, w, geom, cols } => conv::conv2d_backward(*x, *w, geom, cols, g, buf),
        Op::BatchNorm(cache) => norm::batch_norm_backward(cache, g, buf),
        Op::SoftmaxCrossEntropy(cache) => loss::cross_entropy_backward(cache, g, buf),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0f64), true).unwrap();
        let loss = tape.square(w).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().item(), Some(6.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0f64), true).unwrap();
        let loss = tape.square(w).unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().item(), Some(12.0));
        tape.zero_grads();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::zeros(&[2]), true).unwrap();
        let y = tape.relu(w).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Shape { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0f64)).unwrap();
        let w = tape.leaf(Tensor::scalar(1.5f64), true).unwrap();
        let p = tape.mul(c, w).unwrap();
        tape.backward(p).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(w).unwrap().item(), Some(2.0));
    }
}
