use std::sync::atomic::{AtomicU64, Ordering};

use crate::ops::conv::{self, ConvGeom};
use crate::ops::elementwise as ew;
use crate::ops::norm::{self, BnConfig, BnMode, BnSaved, RunningStats};
use crate::ops::pool;
use crate::{Element, Error, Result, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// Gradient rule for an operation defined outside this crate.
pub trait BackwardRule<T>: Send {
    /// Given the op's inputs, its output and the gradient flowing into the
    /// output, returns one gradient per input (`None` for inputs that need
    /// none). Each gradient has its input's shape.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Relu(usize),
    Sigmoid(usize),
    Sum(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        saved: BnSaved<T>,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    GlobalAvg(usize),
    Custom {
        inputs: Vec<usize>,
        rule: Box<dyn BackwardRule<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
    grad: Option<Tensor<T>>,
}

/// Operation tape. Nodes are appended in execution order, which is a
/// topological order by construction; `backward` walks it in reverse.
pub struct Graph<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn any_grad(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Records a constant (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf whose gradient is accumulated by `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.idx(v).expect("var from another graph")].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.idx(v).expect("var from another graph")].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[self.idx(v).expect("var from another graph")].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        let i = self.idx(v).expect("var from another graph");
        self.nodes[i].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: impl FnOnce(usize, usize) -> Op<T>) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = ew::binary(&self.nodes[ia].value, &self.nodes[ib].value, f)?;
        let rg = self.any_grad(&[ia, ib]);
        Ok(self.push(out, op(ia, ib), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.map(|x| x * s);
        let rg = self.any_grad(&[ia]);
        Ok(self.push(out, Op::Scale(ia, s), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = ew::relu(&self.nodes[ia].value);
        let rg = self.any_grad(&[ia]);
        Ok(self.push(out, Op::Relu(ia), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = ew::sigmoid(&self.nodes[ia].value);
        let rg = self.any_grad(&[ia]);
        Ok(self.push(out, Op::Sigmoid(ia), rg))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = Tensor::scalar(self.nodes[ia].value.sum());
        let rg = self.any_grad(&[ia]);
        Ok(self.push(out, Op::Sum(ia), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let out = conv::conv2d(
            &self.nodes[ix].value,
            &self.nodes[iw].value,
            ib.map(|i| &self.nodes[i].value),
            geom,
        )?;
        let mut ids = vec![ix, iw];
        ids.extend(ib);
        let rg = self.any_grad(&ids);
        Ok(self.push(out, Op::Conv2d { x: ix, w: iw, b: ib, geom }, rg))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let out = conv::conv_transpose2d(
            &self.nodes[ix].value,
            &self.nodes[iw].value,
            ib.map(|i| &self.nodes[i].value),
            geom,
        )?;
        let mut ids = vec![ix, iw];
        ids.extend(ib);
        let rg = self.any_grad(&ids);
        Ok(self.push(out, Op::ConvTranspose2d { x: ix, w: iw, b: ib, geom }, rg))
    }

    /// Batch normalization; train mode also updates `stats`.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BnMode,
        cfg: BnConfig,
    ) -> Result<Var> {
        let (ix, ig, ibt) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let (out, saved) = norm::batch_norm2d(
            &self.nodes[ix].value,
            &self.nodes[ig].value,
            &self.nodes[ibt].value,
            stats,
            mode,
            cfg,
        )?;
        let rg = self.any_grad(&[ix, ig, ibt]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x: ix,
                gamma: ig,
                beta: ibt,
                saved,
            },
            rg,
        ))
    }

    pub fn pool(&mut self, kind: pool::PoolKind, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let rg = self.any_grad(&[ix]);
        match kind {
            pool::PoolKind::Max3x3S2 => {
                let (out, argmax) = pool::max_pool3x3s2(&self.nodes[ix].value)?;
                Ok(self.push(out, Op::MaxPool { x: ix, argmax }, rg))
            }
            pool::PoolKind::GlobalAvg => {
                let out = pool::global_avg_pool(&self.nodes[ix].value)?;
                Ok(self.push(out, Op::GlobalAvg(ix), rg))
            }
        }
    }

    /// Records an externally computed value with its own gradient rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, rule: Box<dyn BackwardRule<T>>) -> Result<Var> {
        let ids = inputs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let rg = self.any_grad(&ids);
        Ok(self.push(value, Op::Custom { inputs: ids, rule }, rg))
    }

    /// Reverse pass from a scalar root. Gradients of trainable leaves are
    /// summed into their stored gradient, so repeated calls accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let r = self.idx(root)?;
        let rv = &self.nodes[r].value;
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=r).map(|_| None).collect();
        grads[r] = Some(Tensor::full(rv.shape(), T::one())?);
        for i in (0..=r).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g)?,
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (j, dj) in self.local_grads(i, &g)? {
                if !self.nodes[j].requires_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&dj)?,
                    slot @ None => *slot = Some(dj),
                }
            }
        }
        Ok(())
    }

    /// Gradients flowing from node `i` into each of its inputs.
    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let val = |j: usize| &self.nodes[j].value;
        let wants = |j: usize| self.nodes[j].requires_grad;
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, ew::reduce_to(g, val(*a).shape())));
                out.push((*b, ew::reduce_to(g, val(*b).shape())));
            }
            Op::Sub(a, b) => {
                out.push((*a, ew::reduce_to(g, val(*a).shape())));
                out.push((*b, ew::reduce_to(g, val(*b).shape()).map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    out.push((*a, ew::mul_grad(g, val(*b), val(*a).shape())));
                }
                if wants(*b) {
                    out.push((*b, ew::mul_grad(g, val(*a), val(*b).shape())));
                }
            }
            Op::Scale(a, s) => out.push((*a, g.map(|v| v * *s))),
            Op::Relu(a) => out.push((*a, ew::relu_backward(val(*a), g))),
            Op::Sigmoid(a) => out.push((*a, ew::sigmoid_backward(val(i), g))),
            Op::Sum(a) => {
                let gv = g.data()[0];
                out.push((*a, Tensor::full(val(*a).shape(), gv)?));
            }
            Op::Conv2d { x, w, b, geom } => {
                let cg = conv::conv2d_backward(val(*x), val(*w), b.is_some(), *geom, g)?;
                out.push((*x, cg.input));
                out.push((*w, cg.weight));
                if let (Some(b), Some(db)) = (b, cg.bias) {
                    out.push((*b, db));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let cg = conv::conv_transpose2d_backward(val(*x), val(*w), b.is_some(), *geom, g)?;
                out.push((*x, cg.input));
                out.push((*w, cg.weight));
                if let (Some(b), Some(db)) = (b, cg.bias) {
                    out.push((*b, db));
                }
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let (dx, dg, db) = norm::batch_norm2d_backward(val(*gamma), saved, g);
                out.push((*x, dx));
                out.push((*gamma, dg));
                out.push((*beta, db));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, pool::max_pool_backward(val(*x).shape(), argmax, g)));
            }
            Op::GlobalAvg(x) => out.push((*x, pool::global_avg_pool_backward(val(*x).shape(), g))),
            Op::Custom { inputs, rule } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&j| val(j)).collect();
                let gs = rule.backward(&ins, val(i), g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Invalid(format!(
                        "custom rule returned {} gradients for {} inputs",
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (&j, gj) in inputs.iter().zip(gs) {
                    if let Some(gj) = gj {
                        if gj.shape() != val(j).shape() {
                            return Err(Error::Broadcast {
                                lhs: gj.shape().to_vec(),
                                rhs: val(j).shape().to_vec(),
                            });
                        }
                        out.push((j, gj));
                    }
                }
            }
        }
        Ok(out)
    }
}
