//! Operation record for reverse-mode differentiation.
//!
//! Every op appends one node holding its output and whatever it needs to
//! map an output gradient back to its inputs. [`Tape::backward`] walks the
//! nodes once in reverse order. Nodes whose inputs are all constants or
//! frozen parameters are skipped entirely.

use super::ops::{self, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Relu(NodeId),
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Gap(NodeId),
    Temporal {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Reshape(NodeId),
    Concat(Vec<NodeId>),
    Mse {
        pred: NodeId,
        target: Tensor<T>,
    },
    SoftmaxCe {
        logits: NodeId,
        class: usize,
        probs: Vec<T>,
    },
    WeightedSum(Vec<(NodeId, T)>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, NodeId)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a node; `None` if the loss does not depend
    /// on it through differentiable inputs.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(node.0).and_then(Option::as_ref)
    }

    /// Parameter gradients, one entry per recorded use of a parameter.
    pub fn params(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|&(pid, node)| self.wrt(node).map(|g| (pid, g.clone())))
            .collect()
    }
}

fn add_into<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_scaled(&g, T::one()),
        None => *slot = Some(g),
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite output from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Graph(format!("node {} not in this record", id.0)))
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A free variable whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Records a parameter; frozen parameters act as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), !p.frozen)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        for id in [x, w, b] {
            self.node(id)?;
        }
        let keep_cols = self.nodes[w.0].requires_grad;
        let (y, geom, cols) =
            ops::conv2d_forward(self.value(x), self.value(w), self.value(b), keep_cols)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(y, Op::Conv2d { x, w, b, geom, cols }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let y = ops::relu(&self.node(x)?.value);
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::Relu(x), rg))
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (y, argmax) = ops::max_pool2(&self.node(x)?.value)?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::MaxPool2 { x, argmax }, rg))
    }

    pub fn gap(&mut self, x: NodeId) -> Result<NodeId> {
        let y = ops::gap(&self.node(x)?.value)?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::Gap(x), rg))
    }

    pub fn temporal_pointwise(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        for id in [x, w, b] {
            self.node(id)?;
        }
        let y = ops::temporal_pointwise(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(y, Op::Temporal { x, w, b }, rg))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        for id in [x, w, b] {
            self.node(id)?;
        }
        let y = ops::linear(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let y = self.node(x)?.value.clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    /// Joins tensors end to end into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.node(p)?.value.data());
        }
        let y = Tensor::new(&[data.len()], data)?;
        let rg = self.needs(parts);
        Ok(self.push(y, Op::Concat(parts.to_vec()), rg))
    }

    pub fn mse(&mut self, pred: NodeId, target: Tensor<T>) -> Result<NodeId> {
        let loss = ops::mse(&self.node(pred)?.value, &target)?;
        let rg = self.needs(&[pred]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, rg))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, class: usize) -> Result<NodeId> {
        let l = &self.node(logits)?.value;
        let loss = ops::softmax_cross_entropy(l, class)?;
        let probs = ops::softmax(l.data());
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                class,
                probs,
            },
            rg,
        ))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, T)]) -> Result<NodeId> {
        let mut total = T::zero();
        for &(id, w) in terms {
            let v = &self.node(id)?.value;
            if v.len() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "weighted_sum term has shape {:?}",
                    v.shape()
                )));
            }
            total = total + w * v.item();
        }
        let ids: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        let rg = self.needs(&ids);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Propagates `d loss / d loss = 1` back through the record.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let node = self.node(loss)?;
        if node.value.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .take(loss.0 + 1)
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(pid) if n.requires_grad => Some((pid, NodeId(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, op: &Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let rg = |id: NodeId| self.nodes[id.0].requires_grad;
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let mut dx = rg(*x).then(|| Tensor::zeros(xv.shape()));
                let mut dw = rg(*w).then(|| Tensor::zeros(wv.shape()));
                let mut db = rg(*b).then(|| Tensor::zeros(self.value(*b).shape()));
                let recomputed;
                let cols = if dw.is_some() && cols.is_empty() {
                    recomputed = ops::conv2d_cols(xv, geom);
                    &recomputed
                } else {
                    cols
                };
                ops::conv2d_backward(
                    geom,
                    cols,
                    wv.data(),
                    g.data(),
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                for (id, d) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(d) = d {
                        add_into(&mut grads[id.0], d);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                add_into(&mut grads[x.0], Tensor::new(xv.shape(), data)?);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    d[src] = d[src] + gv;
                }
                add_into(&mut grads[x.0], dx);
            }
            Op::Gap(x) => {
                let xv = self.value(*x);
                let hw = xv.len() / g.len();
                let inv = T::one() / T::of(hw as f64);
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, hw))
                    .collect();
                add_into(&mut grads[x.0], Tensor::new(xv.shape(), data)?);
            }
            Op::Temporal { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, d) = (xv.shape()[0], xv.shape()[1]);
                let cout = wv.shape()[0];
                if rg(*x) {
                    // dX = Wᵀ·G
                    let mut dx = Tensor::zeros(xv.shape());
                    T::gemm(k, cout, d, T::one(), wv.data(), 1, k as isize, g.data(), d as isize, 1, T::zero(), dx.data_mut(), d as isize, 1);
                    add_into(&mut grads[x.0], dx);
                }
                if rg(*w) {
                    // dW = G·Xᵀ
                    let mut dw = Tensor::zeros(wv.shape());
                    T::gemm(cout, d, k, T::one(), g.data(), d as isize, 1, xv.data(), 1, d as isize, T::zero(), dw.data_mut(), k as isize, 1);
                    add_into(&mut grads[w.0], dw);
                }
                if rg(*b) {
                    let db = g.data().chunks_exact(d).map(|r| r.iter().copied().sum()).collect();
                    add_into(&mut grads[b.0], Tensor::new(&[cout], db)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let din = xv.len();
                if rg(*x) {
                    let mut dx = vec![T::zero(); din];
                    for (row, &gv) in wv.data().chunks_exact(din).zip(g.data()) {
                        for (acc, &wv) in dx.iter_mut().zip(row) {
                            *acc = *acc + wv * gv;
                        }
                    }
                    add_into(&mut grads[x.0], Tensor::new(xv.shape(), dx)?);
                }
                if rg(*w) {
                    let dw = g
                        .data()
                        .iter()
                        .flat_map(|&gv| xv.data().iter().map(move |&xv| gv * xv))
                        .collect();
                    add_into(&mut grads[w.0], Tensor::new(wv.shape(), dw)?);
                }
                if rg(*b) {
                    add_into(&mut grads[b.0], g.clone());
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                add_into(&mut grads[x.0], g.clone().reshape(&shape)?);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let n = pv.len();
                    if rg(*p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        add_into(&mut grads[p.0], Tensor::new(pv.shape(), slice)?);
                    }
                    offset += n;
                }
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let scale = T::of(2.0) * g.item() / T::of(pv.len() as f64);
                let data = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| scale * (p - t))
                    .collect();
                add_into(&mut grads[pred.0], Tensor::new(pv.shape(), data)?);
            }
            Op::SoftmaxCe {
                logits,
                class,
                probs,
            } => {
                let gv = g.item();
                let mut data: Vec<T> = probs.iter().map(|&p| p * gv).collect();
                data[*class] = data[*class] - gv;
                add_into(&mut grads[logits.0], Tensor::new(self.value(*logits).shape(), data)?);
            }
            Op::WeightedSum(terms) => {
                for &(id, w) in terms {
                    if rg(id) {
                        add_into(&mut grads[id.0], Tensor::scalar(w * g.item()));
                    }
                }
            }
        }
        Ok(())
    }
}
