//! Tape-style reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Graph`] records every operation in creation order, so node inputs
//! always point at earlier nodes and a single reverse sweep over the tape
//! is a valid topological traversal. Values are computed eagerly when a node
//! is pushed; [`Graph::backward`] then walks the tape from the loss node.
//!
//! ```
//! use fnr_core::autodiff::Graph;
//! use fnr_core::tensor::Tensor2;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.parameter(Tensor2::from_rows(&[&[2.0, 3.0]]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[4.0, 6.0]);
//! ```

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{FnrError, Result};
use crate::tensor::{gelu_grad_scalar, gelu_scalar, Real, Tensor2};

/// Lower clamp applied to every probability before a logarithm; the upper
/// clamp is `1 - LOG_CLAMP`.
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulTransposed(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    ConcatCols(NodeId, NodeId),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    Dropout(NodeId, Tensor2<T>),
    Clamp(NodeId, T, T),
    Ln(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    BceMean {
        target: NodeId,
        pred: NodeId,
    },
    WeightedNll {
        probs: NodeId,
        labels: Vec<usize>,
        weights: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulTransposed(..) => "matmul_transposed",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::ConcatCols(..) => "concat_cols",
            Op::Gelu(_) => "gelu",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Dropout(..) => "dropout",
            Op::Clamp(..) => "clamp",
            Op::Ln(_) => "ln",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::BceMean { .. } => "bce_mean",
            Op::WeightedNll { .. } => "weighted_nll",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor2<T>,
    trainable: bool,
}

/// An append-only record of tensor operations.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every trainable leaf.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: BTreeMap<NodeId, Tensor2<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor2<T>> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor2<T>> {
        self.grads.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn clamp_bounds<T: Real>() -> (T, T) {
    (T::from_f64(LOG_CLAMP), T::from_f64(1.0 - LOG_CLAMP))
}

fn clamp_prob<T: Real>(p: T) -> (T, bool) {
    let (lo, hi) = clamp_bounds::<T>();
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2<T> {
        &self.nodes[id.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data()[0]
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        self.nodes[id.0].trainable
    }

    fn push(&mut self, op: Op<T>, value: Tensor2<T>) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(FnrError::Numeric(format!(
                "{} produced a non-finite value (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            op,
            value,
            trainable: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor2<T>, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor2<T>) -> NodeId {
        self.leaf(value, false)
    }

    /// A trainable leaf; [`Graph::backward`] always reports a gradient for it.
    pub fn parameter(&mut self, value: Tensor2<T>) -> NodeId {
        self.leaf(value, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v)
    }

    /// `a * b^T`.
    pub fn matmul_transposed(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_transposed(self.value(b))?;
        self.push(Op::MatMulTransposed(a, b), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        self.push(Op::Mul(a, b), v)
    }

    /// Broadcasts a `1 x cols` row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(row))?;
        self.push(Op::AddRow(a, row), v)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).concat_cols(self.value(b))?;
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(gelu_scalar);
        self.push(Op::Gelu(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).softmax_rows();
        self.push(Op::SoftmaxRows(a), v)
    }

    /// Inverted dropout: each entry survives with probability `1 - rate` and
    /// is scaled by `1 / (1 - rate)`. A zero rate returns `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: NodeId,
        rate: f64,
        rng: &mut R,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(FnrError::Contract(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let (rows, cols) = self.value(a).shape();
        let mask = Tensor2::from_fn(rows, cols, |_, _| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        });
        let v = self.value(a).hadamard(&mask)?;
        self.push(Op::Dropout(a, mask), v)
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only inside the range.
    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| {
            if x < lo {
                lo
            } else if x > hi {
                hi
            } else {
                x
            }
        });
        self.push(Op::Clamp(a, lo, hi), v)
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| !(x > T::zero())) {
            return Err(FnrError::Numeric("ln of a non-positive entry".into()));
        }
        let v = self.value(a).map(|x| x.ln());
        self.push(Op::Ln(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor2::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let n = T::from_f64(t.len() as f64);
        let v = Tensor2::filled(1, 1, t.sum() / n);
        self.push(Op::Mean(a), v)
    }

    /// Mean binary cross-entropy `-(t ln p + (1 - t) ln(1 - p))` over all
    /// entries, with `p` clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`.
    ///
    /// Differentiable with respect to both arguments, so soft targets that
    /// depend on parameters contribute their own gradient.
    pub fn bce_mean(&mut self, target: NodeId, pred: NodeId) -> Result<NodeId> {
        let t = self.value(target);
        let p = self.value(pred);
        t.expect_same_shape(p, "bce_mean")?;
        if t.data().iter().any(|&x| x < T::zero() || x > T::one()) {
            return Err(FnrError::Contract("bce_mean target outside [0, 1]".into()));
        }
        let mut total = T::zero();
        for (&ti, &pi) in t.data().iter().zip(p.data()) {
            let (pc, _) = clamp_prob(pi);
            total += -(ti * pc.ln() + (T::one() - ti) * (T::one() - pc).ln());
        }
        let v = Tensor2::filled(1, 1, total / T::from_f64(t.len() as f64));
        self.push(Op::BceMean { target, pred }, v)
    }

    /// Mean over rows of `-weights[y_i] * ln(probs[i, y_i])` with the
    /// probability clamped as in [`Graph::bce_mean`].
    pub fn weighted_nll(
        &mut self,
        probs: NodeId,
        labels: &[usize],
        weights: &[T],
    ) -> Result<NodeId> {
        let p = self.value(probs);
        if labels.len() != p.rows() {
            return Err(FnrError::shape(
                "weighted_nll",
                p.shape(),
                (labels.len(), 1),
            ));
        }
        if weights.len() != p.cols() {
            return Err(FnrError::shape(
                "weighted_nll",
                p.shape(),
                (1, weights.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= p.cols()) {
            return Err(FnrError::Data(format!(
                "label {bad} outside 0..{}",
                p.cols()
            )));
        }
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let (pc, _) = clamp_prob(p.get(i, y));
            total += -(weights[y] * pc.ln());
        }
        let v = Tensor2::filled(1, 1, total / T::from_f64(labels.len().max(1) as f64));
        self.push(
            Op::WeightedNll {
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            v,
        )
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(FnrError::Contract(format!(
                "backward needs a 1x1 loss node, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut pending: Vec<Option<Tensor2<T>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Tensor2::ones(1, 1));
        let mut out = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if node.trainable {
                        out.insert(NodeId(idx), g);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_transposed(self.value(*b))?;
                    let gb = self.value(*a).transposed_matmul(&g)?;
                    accumulate(&mut pending, *a, ga)?;
                    accumulate(&mut pending, *b, gb)?;
                }
                Op::MatMulTransposed(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.transposed_matmul(self.value(*a))?;
                    accumulate(&mut pending, *a, ga)?;
                    accumulate(&mut pending, *b, gb)?;
                }
                Op::Transpose(a) => accumulate(&mut pending, *a, g.transpose())?,
                Op::Add(a, b) => {
                    accumulate(&mut pending, *a, g.clone())?;
                    accumulate(&mut pending, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut pending, *a, g.clone())?;
                    accumulate(&mut pending, *b, g.map(|x| -x))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    accumulate(&mut pending, *a, ga)?;
                    accumulate(&mut pending, *b, gb)?;
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut pending, *row, g.sum_rows())?;
                    accumulate(&mut pending, *a, g)?;
                }
                Op::Scale(a, c) => accumulate(&mut pending, *a, g.scale(*c))?,
                Op::AddScalar(a) => accumulate(&mut pending, *a, g)?,
                Op::ConcatCols(a, b) => {
                    let (ga, gb) = g.split_cols(self.value(*a).cols());
                    accumulate(&mut pending, *a, ga)?;
                    accumulate(&mut pending, *b, gb)?;
                }
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), "gelu_backward", |gi, x| {
                        gi * gelu_grad_scalar(x)
                    })?;
                    accumulate(&mut pending, *a, ga)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut ga = Vec::with_capacity(y.len());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: T = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                        ga.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
                    }
                    accumulate(&mut pending, *a, Tensor2::new(y.rows(), cols, ga)?)?;
                }
                Op::Dropout(a, mask) => accumulate(&mut pending, *a, g.hadamard(mask)?)?,
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g.zip_map(self.value(*a), "clamp_backward", |gi, x| {
                        if x < lo || x > hi {
                            T::zero()
                        } else {
                            gi
                        }
                    })?;
                    accumulate(&mut pending, *a, ga)?;
                }
                Op::Ln(a) => {
                    let ga = g.zip_map(self.value(*a), "ln_backward", |gi, x| gi / x)?;
                    accumulate(&mut pending, *a, ga)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut pending, *a, Tensor2::filled(r, c, g.data()[0]))?;
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let share = g.data()[0] / T::from_f64((r * c) as f64);
                    accumulate(&mut pending, *a, Tensor2::filled(r, c, share))?;
                }
                Op::BceMean { target, pred } => {
                    let t = self.value(*target);
                    let p = self.value(*pred);
                    let share = g.data()[0] / T::from_f64(t.len() as f64);
                    let mut gt = Vec::with_capacity(t.len());
                    let mut gp = Vec::with_capacity(t.len());
                    for (&ti, &pi) in t.data().iter().zip(p.data()) {
                        let (pc, inside) = clamp_prob(pi);
                        let one_minus = T::one() - pc;
                        gt.push(-share * (pc.ln() - one_minus.ln()));
                        gp.push(if inside {
                            -share * (ti / pc - (T::one() - ti) / one_minus)
                        } else {
                            T::zero()
                        });
                    }
                    let (r, c) = t.shape();
                    accumulate(&mut pending, *target, Tensor2::new(r, c, gt)?)?;
                    accumulate(&mut pending, *pred, Tensor2::new(r, c, gp)?)?;
                }
                Op::WeightedNll {
                    probs,
                    labels,
                    weights,
                } => {
                    let p = self.value(*probs);
                    let share = g.data()[0] / T::from_f64(labels.len().max(1) as f64);
                    let mut gp = Tensor2::zeros(p.rows(), p.cols());
                    for (i, &y) in labels.iter().enumerate() {
                        let (pc, inside) = clamp_prob(p.get(i, y));
                        if inside {
                            gp.set(i, y, -share * weights[y] / pc);
                        }
                    }
                    accumulate(&mut pending, *probs, gp)?;
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.trainable {
                let (r, c) = node.value.shape();
                out.entry(NodeId(idx))
                    .or_insert_with(|| Tensor2::zeros(r, c));
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate<T: Real>(
    pending: &mut [Option<Tensor2<T>>],
    id: NodeId,
    g: Tensor2<T>,
) -> Result<()> {
    match &mut pending[id.0] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
