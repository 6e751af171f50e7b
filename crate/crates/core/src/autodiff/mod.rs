//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in execution order. Each recorded
//! node keeps its forward value and enough context to run its backward
//! rule, so [`Graph::backward`] is a single reverse sweep over the node
//! list. Leaves created with `requires_grad = true` receive gradients;
//! nodes that do not depend on such a leaf are skipped entirely.
//!
//! ```
//! use resinv_core::autodiff::Graph;
//! use resinv_core::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.mean(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
//! ```

pub(crate) mod conv;
mod ops;

use crate::error::{ensure, Result};
use crate::resize::interp::ResizeTaps;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Abs(Var),
    Clamp(Var, T, T),
    LeakyRelu(Var, T),
    Silu(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: conv::ConvGeometry,
    },
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        /// per (n, group): mean and reciprocal standard deviation
        stats: Vec<(T, T)>,
    },
    Resize {
        input: Var,
        taps: Box<ResizeTaps<T>>,
    },
    GlobalAvgPool(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recorded computation, in topological (execution) order.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Only leaves created with `requires_grad`
    /// (and nodes derived from them) take part in the backward sweep.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &str) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Propagates `d loss / d node` to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        ensure!(
            lv.is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            lv.shape()
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backward_node(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v))?;
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |g, y| g * y)?)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |g, x| g * x)?)?;
                }
            }
            Op::Div(a, b) => {
                let y = val(*b);
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(y, |g, y| g / y)?)?;
                }
                if self.wants(*b) {
                    // d(x/y)/dy = -out / y
                    let t = g.zip_map(&node.value, |g, o| g * o)?;
                    self.accumulate(grads, *b, t.zip_map(y, |t, y| -t / y)?)?;
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|v| v * s))?;
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshape(&shape)?)?;
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, g.zip_map(&node.value, |g, e| g * e)?)?;
            }
            Op::Abs(a) => {
                let sign = |x: T| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                self.accumulate(grads, *a, g.zip_map(val(*a), |g, x| g * sign(x))?)?;
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = g.zip_map(val(*a), |g, x| if x > lo && x < hi { g } else { T::zero() })?;
                self.accumulate(grads, *a, d)?;
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let d = g.zip_map(val(*a), |g, x| if x > T::zero() { g } else { g * s })?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Silu(a) => {
                let d = g.zip_map(val(*a), |g, x| {
                    let sig = T::one() / (T::one() + (-x).exp());
                    g * sig * (T::one() + x * (T::one() - sig))
                })?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item()))?;
            }
            Op::Mean(a) => {
                let x = val(*a);
                let n = T::from_usize(x.numel()).unwrap();
                self.accumulate(grads, *a, Tensor::full(x.shape(), g.item() / n))?;
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let want = (
                    self.wants(*input),
                    self.wants(*weight),
                    bias.is_some_and(|b| self.wants(b)),
                );
                let (dx, dw, db) = conv::backward(geom, val(*input), val(*weight), g, want);
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, dx)?;
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *weight, dw)?;
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let (dx, dgamma, dbeta) =
                    ops::group_norm_backward(val(*input), val(*gamma), g, *groups, stats);
                if self.wants(*input) {
                    self.accumulate(grads, *input, dx)?;
                }
                self.accumulate(grads, *gamma, dgamma)?;
                self.accumulate(grads, *beta, dbeta)?;
            }
            Op::Resize { input, taps } => {
                self.accumulate(grads, *input, taps.backward(g))?;
            }
            Op::GlobalAvgPool(a) => {
                let x = val(*a);
                let (n, c, h, w) = x.dims4()?;
                let inv = T::one() / T::from_usize(h * w).unwrap();
                let d = Tensor::from_fn(&[n, c, h, w], |idx| g.data()[idx / (h * w)] * inv);
                self.accumulate(grads, *a, d)?;
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let shape = val(*logits).shape().to_vec();
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g.item() / T::from_usize(n).unwrap();
                let d = Tensor::from_fn(&shape, |idx| {
                    let (row, col) = (idx / k, idx % k);
                    let onehot = if labels[row] == col { T::one() } else { T::zero() };
                    (probs[idx] - onehot) * scale
                });
                self.accumulate(grads, *logits, d)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
