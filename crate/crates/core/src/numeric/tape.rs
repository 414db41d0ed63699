//! Reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order and hold their forward value.
//! Parameters are not nodes: operations reference them by [`ParamId`] and
//! their gradients are accumulated into a [`Gradients`] buffer that mirrors
//! the [`ParamStore`] shape for shape.
//!
//! Shape mismatches between operands are programming errors and panic.

use super::matrix::{axpy, dot};
use super::{log_sum_exp, softmax_unchecked, DenseMatrix, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of parameter matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<DenseMatrix<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix<T> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&DenseMatrix<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.values.iter().map(DenseMatrix::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }
}

/// Per-parameter gradient buffers, same order and shapes as a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    values: Vec<DenseMatrix<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            values: store
                .values
                .iter()
                .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix<T> {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DenseMatrix<T>> {
        self.values.iter()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.add_assign(b).expect("gradient buffers share shapes");
        }
    }

    pub fn scale(&mut self, k: T) {
        self.values.iter_mut().for_each(|m| m.scale(k));
    }

    pub fn global_norm(&self) -> T {
        self.values.iter().map(DenseMatrix::sum_squares).sum::<T>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    ParamRow {
        param: ParamId,
        row: usize,
    },
    ParamVector {
        param: ParamId,
    },
    /// `W x + b`
    Affine {
        w: ParamId,
        x: Var,
        b: Option<ParamId>,
    },
    /// `W x + U h + b`
    Affine2 {
        w: ParamId,
        x: Var,
        u: ParamId,
        h: Var,
        b: ParamId,
    },
    /// `sum_v counts[v] * P[v, :]`
    BowProject {
        param: ParamId,
        counts: Vec<(usize, T)>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Softmax(Var),
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    SumAll(Vec<Var>),
    /// `-log softmax(logits)[target]`; saves the softmax.
    Nll {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Vec<T>,
    op: Op<T>,
}

/// Gradient of the root with respect to every node on the tape.
#[derive(Debug)]
pub struct NodeGradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> NodeGradients<T> {
    /// `None` when the node does not influence the root.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "scalar() on a node of length {}", value.len());
        value[0]
    }

    fn push(&mut self, value: Vec<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![T::zero(); n])
    }

    pub fn param_row(&mut self, param: ParamId, row: usize) -> Var {
        let value = self.params.get(param).row(row).to_vec();
        self.push(value, Op::ParamRow { param, row })
    }

    /// Whole parameter, flattened.
    pub fn param_vector(&mut self, param: ParamId) -> Var {
        let value = self.params.get(param).as_slice().to_vec();
        self.push(value, Op::ParamVector { param })
    }

    pub fn affine(&mut self, w: ParamId, x: Var, b: Option<ParamId>) -> Var {
        let wm = self.params.get(w);
        assert_eq!(wm.cols(), self.value(x).len(), "affine input width");
        let mut out = match b {
            Some(b) => {
                let bm = self.params.get(b);
                assert_eq!(bm.len(), wm.rows(), "affine bias length");
                bm.as_slice().to_vec()
            }
            None => vec![T::zero(); wm.rows()],
        };
        wm.matvec_acc(self.value(x), &mut out);
        self.push(out, Op::Affine { w, x, b })
    }

    pub fn affine2(&mut self, w: ParamId, x: Var, u: ParamId, h: Var, b: ParamId) -> Var {
        let (wm, um, bm) = (self.params.get(w), self.params.get(u), self.params.get(b));
        assert_eq!(wm.cols(), self.value(x).len(), "affine2 input width");
        assert_eq!(um.cols(), self.value(h).len(), "affine2 recurrent width");
        assert!(wm.rows() == um.rows() && bm.len() == wm.rows(), "affine2 output width");
        let mut out = bm.as_slice().to_vec();
        wm.matvec_acc(self.value(x), &mut out);
        um.matvec_acc(self.value(h), &mut out);
        self.push(out, Op::Affine2 { w, x, u, h, b })
    }

    /// Projects a sparse count vector through the rows of `param`.
    pub fn bow_project(&mut self, param: ParamId, counts: Vec<(usize, T)>) -> Var {
        let pm = self.params.get(param);
        let mut out = vec![T::zero(); pm.cols()];
        for &(v, c) in &counts {
            axpy(c, pm.row(v), &mut out);
        }
        self.push(out, Op::BowProject { param, counts })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.len(), y.len(), "add operand lengths");
        let out = x.iter().zip(y).map(|(&p, &q)| p + q).collect();
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.len(), y.len(), "mul operand lengths");
        let out = x.iter().zip(y).map(|(&p, &q)| p * q).collect();
        self.push(out, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| super::sigmoid(x)).collect();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.tanh()).collect();
        self.push(out, Op::Tanh(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Stacks scalar nodes into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let out = scalars.iter().map(|&s| self.scalar(s)).collect();
        self.push(out, Op::Stack(scalars.to_vec()))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_unchecked(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    /// `sum_k weights[k] * items[k]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = self.value(weights);
        assert_eq!(w.len(), items.len(), "one weight per item");
        assert!(!items.is_empty(), "weighted sum of nothing");
        let mut out = vec![T::zero(); self.value(items[0]).len()];
        for (k, &item) in items.iter().enumerate() {
            axpy(w[k], self.value(item), &mut out);
        }
        self.push(
            out,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    /// Elementwise sum of equal-length nodes.
    pub fn sum_all(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum of nothing");
        let mut out = self.value(parts[0]).to_vec();
        for &p in &parts[1..] {
            for (o, &x) in out.iter_mut().zip(self.value(p)) {
                *o = *o + x;
            }
        }
        self.push(out, Op::SumAll(parts.to_vec()))
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`.
    pub fn nll(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits);
        assert!(target < z.len(), "nll target out of range");
        let lse = log_sum_exp(z);
        let value = lse - z[target];
        let probs = softmax_unchecked(z);
        self.push(vec![value], Op::Nll { logits, target, probs })
    }

    /// Softmax saved by an [`Tape::nll`] node.
    pub fn nll_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Nll { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Backpropagates from a scalar `root`, adding parameter gradients into
    /// `param_grads`. Operations are visited in exact reverse order.
    pub fn backward_into(&self, root: Var, param_grads: &mut Gradients<T>) -> NodeGradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::ParamRow { param, row } => {
                    axpy(T::one(), &g, param_grads.get_mut(*param).row_mut(*row));
                }
                Op::ParamVector { param } => {
                    axpy(T::one(), &g, param_grads.get_mut(*param).as_mut_slice());
                }
                Op::Affine { w, x, b } => {
                    param_grads.get_mut(*w).outer_acc(&g, self.value(*x));
                    if let Some(b) = b {
                        axpy(T::one(), &g, param_grads.get_mut(*b).as_mut_slice());
                    }
                    let gx = slot(&mut grads, *x, self.value(*x).len());
                    self.params.get(*w).matvec_t_acc(&g, gx);
                }
                Op::Affine2 { w, x, u, h, b } => {
                    param_grads.get_mut(*w).outer_acc(&g, self.value(*x));
                    param_grads.get_mut(*u).outer_acc(&g, self.value(*h));
                    axpy(T::one(), &g, param_grads.get_mut(*b).as_mut_slice());
                    let gx = slot(&mut grads, *x, self.value(*x).len());
                    self.params.get(*w).matvec_t_acc(&g, gx);
                    let gh = slot(&mut grads, *h, self.value(*h).len());
                    self.params.get(*u).matvec_t_acc(&g, gh);
                }
                Op::BowProject { param, counts } => {
                    let pg = param_grads.get_mut(*param);
                    for &(v, c) in counts {
                        axpy(c, &g, pg.row_mut(v));
                    }
                }
                Op::Add(a, b) => {
                    axpy(T::one(), &g, slot(&mut grads, *a, g.len()));
                    axpy(T::one(), &g, slot(&mut grads, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * xb[i];
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] = gb[i] + g[i] * xa[i];
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * y[i] * (T::one() - y[i]);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] = ga[i] + g[i] * (T::one() - y[i] * y[i]);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        axpy(T::one(), &g[offset..offset + n], slot(&mut grads, p, n));
                        offset += n;
                    }
                }
                Op::Stack(scalars) => {
                    for (k, &s) in scalars.iter().enumerate() {
                        let gs = slot(&mut grads, s, 1);
                        gs[0] = gs[0] + g[k];
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner = dot(&g, y);
                    let ga = slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] = ga[i] + y[i] * (g[i] - inner);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.value(*weights).to_vec();
                    let mut gw = Vec::with_capacity(items.len());
                    for (k, &item) in items.iter().enumerate() {
                        gw.push(dot(&g, self.value(item)));
                        axpy(w[k], &g, slot(&mut grads, item, g.len()));
                    }
                    axpy(T::one(), &gw, slot(&mut grads, *weights, gw.len()));
                }
                Op::SumAll(parts) => {
                    for &p in parts {
                        axpy(T::one(), &g, slot(&mut grads, p, g.len()));
                    }
                }
                Op::Nll { logits, target, probs } => {
                    let gl = slot(&mut grads, *logits, probs.len());
                    for (i, &p) in probs.iter().enumerate() {
                        let d = if i == *target { p - T::one() } else { p };
                        gl[i] = gl[i] + g[0] * d;
                    }
                }
            }
            grads[idx] = Some(g);
        }
        NodeGradients { grads }
    }

    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut out = Gradients::zeros_like(self.params);
        self.backward_into(root, &mut out);
        out
    }

    /// Checks that every node value is finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.nodes.iter().position(|n| n.value.iter().any(|x| !x.is_finite())) {
            Some(i) => Err(Error::NonFinite(format!("tape node {i}"))),
            None => Ok(()),
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}
