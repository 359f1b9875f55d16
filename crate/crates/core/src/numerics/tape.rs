//! Tape-based reverse-mode differentiation over rank-1/rank-2 tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] then walks the record in reverse and
//! returns the gradient of a scalar loss with respect to every trainable
//! parameter that was placed on the tape.
//!
//! The operation set is deliberately closed: matmul (optionally against a
//! transposed right operand), add (with row broadcast), scalar multiply,
//! elementwise multiply, row/column concatenation and slicing, tanh, exact
//! GELU, layer normalisation, row softmax, log, clamp, sum, mean and row L2
//! normalisation. Every op checks its output for non-finite values.

use std::cell::RefCell;
use std::collections::HashMap;

use super::kernels::{matmul_nn, matmul_nt, matmul_tn};
use super::tensor::ensure_finite;
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norms at or below this are rejected by L2 normalisation.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Add {
        a: usize,
        b: usize,
        row_broadcast: bool,
    },
    Mul {
        a: usize,
        b: usize,
        scalar_b: bool,
    },
    Scale {
        a: usize,
        c: T,
    },
    Concat {
        parts: Vec<usize>,
        axis: Axis,
    },
    Slice {
        a: usize,
        axis: Axis,
        start: usize,
    },
    Tanh(usize),
    Gelu(usize),
    Log(usize),
    Clamp {
        a: usize,
        lo: T,
        hi: T,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(usize),
    Sum(usize),
    Mean(usize),
    L2Norm {
        a: usize,
        norms: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Records a computation graph for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
    leaves: RefCell<Vec<(ParamId, usize)>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            leaves: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Untracked input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient without being a stored parameter.
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Places a stored parameter on the tape (once per tape).
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.params.borrow_mut().insert(id, v.id);
        if p.trainable {
            self.leaves.borrow_mut().push((id, v.id));
        }
        v
    }

    pub fn concat(&self, parts: &[Var<'_, T>], axis: Axis) -> Result<Var<'_, T>> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let nodes = self.nodes.borrow();
        let vals: Vec<&Tensor<T>> = parts.iter().map(|p| &nodes[p.id].value).collect();
        if vals.iter().any(|v| v.shape().len() != 2) {
            return Err(Error::shape("concat", "inputs must be rank 2"));
        }
        let out = match axis {
            Axis::Rows => {
                let cols = vals[0].cols();
                if vals.iter().any(|v| v.cols() != cols) {
                    return Err(Error::shape("concat", "column counts differ"));
                }
                let rows = vals.iter().map(|v| v.rows()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for v in &vals {
                    data.extend_from_slice(v.data());
                }
                Tensor::from_parts(vec![rows, cols], data)
            }
            Axis::Cols => {
                let rows = vals[0].rows();
                if vals.iter().any(|v| v.rows() != rows) {
                    return Err(Error::shape("concat", "row counts differ"));
                }
                let cols: usize = vals.iter().map(|v| v.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for v in &vals {
                        data.extend_from_slice(v.row(r));
                    }
                }
                Tensor::from_parts(vec![rows, cols], data)
            }
        };
        let tracked = parts.iter().any(|p| nodes[p.id].tracked);
        drop(nodes);
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            tracked,
        ))
    }

    /// Gradients of a scalar `loss` for every trainable parameter on this tape.
    /// Parameters that do not influence the loss get an all-zero gradient.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        ensure_finite(root.value.data(), "loss")?;
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        let mut out = Gradients::default();
        for &(pid, nid) in self.leaves.borrow().iter() {
            let shape = nodes[nid].value.shape().to_vec();
            let g = match grads.get_mut(nid).and_then(Option::take) {
                Some(g) => Tensor::from_parts(shape, g),
                None => Tensor::zeros(shape),
            };
            ensure_finite(g.data(), "backward")?;
            out.insert(pid, g);
        }
        Ok(out)
    }

    /// Gradient with respect to an arbitrary leaf created by [`Tape::variable`].
    pub fn backward_leaves(&self, loss: Var<'_, T>, leaves: &[Var<'_, T>]) -> Result<Vec<Tensor<T>>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![T::one()]);
        let mut kept: HashMap<usize, Vec<T>> = HashMap::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].tracked {
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
            if matches!(nodes[id].op, Op::Leaf) {
                kept.insert(id, g);
            }
        }
        Ok(leaves
            .iter()
            .map(|l| {
                let shape = nodes[l.id].value.shape().to_vec();
                match kept.remove(&l.id) {
                    Some(g) => Tensor::from_parts(shape, g),
                    None => Tensor::zeros(shape),
                }
            })
            .collect())
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

fn backprop<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    let tr = |i: usize| nodes[i].tracked;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, trans_b } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = (av.rows(), av.cols());
            let n = node.value.cols();
            if tr(*a) {
                let ga = slot(grads, *a, m * k);
                if *trans_b {
                    // C = A·Bᵀ, B: n×k  →  dA = dC·B
                    matmul_nn(g, bv.data(), ga, m, n, k);
                } else {
                    // C = A·B, B: k×n  →  dA = dC·Bᵀ
                    matmul_nt(g, bv.data(), ga, m, n, k);
                }
            }
            if tr(*b) {
                let gb = slot(grads, *b, bv.numel());
                if *trans_b {
                    // dB = dCᵀ·A
                    matmul_tn(g, av.data(), gb, m, n, k);
                } else {
                    // dB = Aᵀ·dC
                    matmul_tn(av.data(), g, gb, m, k, n);
                }
            }
        }
        Op::Add { a, b, row_broadcast } => {
            if tr(*a) {
                let ga = slot(grads, *a, g.len());
                for (x, y) in ga.iter_mut().zip(g) {
                    *x = *x + *y;
                }
            }
            if tr(*b) {
                let nb = val(*b).numel();
                let gb = slot(grads, *b, nb);
                if *row_broadcast {
                    for row in g.chunks_exact(nb) {
                        for (x, y) in gb.iter_mut().zip(row) {
                            *x = *x + *y;
                        }
                    }
                } else {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x = *x + *y;
                    }
                }
            }
        }
        Op::Mul { a, b, scalar_b } => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if tr(*a) {
                let ga = slot(grads, *a, g.len());
                if *scalar_b {
                    let s = bv[0];
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x = *x + *y * s;
                    }
                } else {
                    for ((x, y), w) in ga.iter_mut().zip(g).zip(bv) {
                        *x = *x + *y * *w;
                    }
                }
            }
            if tr(*b) {
                if *scalar_b {
                    let s: T = g.iter().zip(av).map(|(y, w)| *y * *w).sum();
                    let gb = slot(grads, *b, 1);
                    gb[0] = gb[0] + s;
                } else {
                    let gb = slot(grads, *b, g.len());
                    for ((x, y), w) in gb.iter_mut().zip(g).zip(av) {
                        *x = *x + *y * *w;
                    }
                }
            }
        }
        Op::Scale { a, c } => {
            if tr(*a) {
                let ga = slot(grads, *a, g.len());
                for (x, y) in ga.iter_mut().zip(g) {
                    *x = *x + *y * *c;
                }
            }
        }
        Op::Concat { parts, axis } => {
            let total_cols = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let (pr, pc) = (pv.rows(), pv.cols());
                if tr(p) {
                    let gp = slot(grads, p, pr * pc);
                    match axis {
                        Axis::Rows => {
                            let src = &g[offset * pc..(offset + pr) * pc];
                            for (x, y) in gp.iter_mut().zip(src) {
                                *x = *x + *y;
                            }
                        }
                        Axis::Cols => {
                            for r in 0..pr {
                                let src = &g[r * total_cols + offset..r * total_cols + offset + pc];
                                for (x, y) in gp[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *x = *x + *y;
                                }
                            }
                        }
                    }
                }
                offset += match axis {
                    Axis::Rows => pr,
                    Axis::Cols => pc,
                };
            }
        }
        Op::Slice { a, axis, start } => {
            if tr(*a) {
                let av = val(*a);
                let ac = av.cols();
                let (or, oc) = (node.value.rows(), node.value.cols());
                let ga = slot(grads, *a, av.numel());
                match axis {
                    Axis::Rows => {
                        let dst = &mut ga[start * ac..(start + or) * ac];
                        for (x, y) in dst.iter_mut().zip(g) {
                            *x = *x + *y;
                        }
                    }
                    Axis::Cols => {
                        for r in 0..or {
                            let dst = &mut ga[r * ac + start..r * ac + start + oc];
                            for (x, y) in dst.iter_mut().zip(&g[r * oc..(r + 1) * oc]) {
                                *x = *x + *y;
                            }
                        }
                    }
                }
            }
        }
        Op::Tanh(a) => {
            if tr(*a) {
                let out = node.value.data();
                let ga = slot(grads, *a, g.len());
                for ((x, y), t) in ga.iter_mut().zip(g).zip(out) {
                    *x = *x + *y * (T::one() - *t * *t);
                }
            }
        }
        Op::Gelu(a) => {
            if tr(*a) {
                let inp = val(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((x, y), v) in ga.iter_mut().zip(g).zip(inp) {
                    *x = *x + *y * gelu_grad(*v);
                }
            }
        }
        Op::Log(a) => {
            if tr(*a) {
                let inp = val(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((x, y), v) in ga.iter_mut().zip(g).zip(inp) {
                    *x = *x + *y / *v;
                }
            }
        }
        Op::Clamp { a, lo, hi } => {
            if tr(*a) {
                let inp = val(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((x, y), v) in ga.iter_mut().zip(g).zip(inp) {
                    if *v >= *lo && *v <= *hi {
                        *x = *x + *y;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let d = node.value.cols();
            let gam = val(*gamma).data();
            if tr(*x) {
                let gx = slot(grads, *x, g.len());
                let dn = T::lit(d as f64);
                for (r, (grow, xrow)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                    let mut mean_dx = T::zero();
                    let mut mean_dxx = T::zero();
                    for j in 0..d {
                        let dxh = grow[j] * gam[j];
                        mean_dx = mean_dx + dxh;
                        mean_dxx = mean_dxx + dxh * xrow[j];
                    }
                    mean_dx = mean_dx / dn;
                    mean_dxx = mean_dxx / dn;
                    let s = inv_std[r];
                    let dst = &mut gx[r * d..(r + 1) * d];
                    for j in 0..d {
                        let dxh = grow[j] * gam[j];
                        dst[j] = dst[j] + s * (dxh - mean_dx - xrow[j] * mean_dxx);
                    }
                }
            }
            if tr(*gamma) {
                let gg = slot(grads, *gamma, d);
                for (grow, xrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        gg[j] = gg[j] + grow[j] * xrow[j];
                    }
                }
            }
            if tr(*beta) {
                let gb = slot(grads, *beta, d);
                for grow in g.chunks_exact(d) {
                    for j in 0..d {
                        gb[j] = gb[j] + grow[j];
                    }
                }
            }
        }
        Op::Softmax(a) => {
            if tr(*a) {
                let d = node.value.cols();
                let out = node.value.data();
                let ga = slot(grads, *a, g.len());
                for ((grow, yrow), dst) in g.chunks_exact(d).zip(out.chunks_exact(d)).zip(ga.chunks_exact_mut(d)) {
                    let s: T = grow.iter().zip(yrow).map(|(u, v)| *u * *v).sum();
                    for j in 0..d {
                        dst[j] = dst[j] + yrow[j] * (grow[j] - s);
                    }
                }
            }
        }
        Op::Sum(a) => {
            if tr(*a) {
                let n = val(*a).numel();
                let ga = slot(grads, *a, n);
                for x in ga.iter_mut() {
                    *x = *x + g[0];
                }
            }
        }
        Op::Mean(a) => {
            if tr(*a) {
                let n = val(*a).numel();
                let s = g[0] / T::lit(n as f64);
                let ga = slot(grads, *a, n);
                for x in ga.iter_mut() {
                    *x = *x + s;
                }
            }
        }
        Op::L2Norm { a, norms } => {
            if tr(*a) {
                let d = node.value.cols();
                let out = node.value.data();
                let ga = slot(grads, *a, g.len());
                for (r, ((grow, yrow), dst)) in g
                    .chunks_exact(d)
                    .zip(out.chunks_exact(d))
                    .zip(ga.chunks_exact_mut(d))
                    .enumerate()
                {
                    let s: T = grow.iter().zip(yrow).map(|(u, v)| *u * *v).sum();
                    let inv = T::one() / norms[r];
                    for j in 0..d {
                        dst[j] = dst[j] + (grow[j] - yrow[j] * s) * inv;
                    }
                }
            }
        }
    }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    T::lit(0.5) * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + x * pdf
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn rows(&self) -> usize {
        self.with_value(Tensor::rows)
    }

    pub fn cols(&self) -> usize {
        self.with_value(Tensor::cols)
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    fn unary(self, name: &'static str, f: impl FnOnce(&Tensor<T>) -> Result<(Tensor<T>, Op<T>)>) -> Result<Var<'t, T>> {
        let (out, op) = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value)?
        };
        ensure_finite(out.data(), name)?;
        Ok(self.tape.push(out, op, self.is_tracked()))
    }

    fn map(self, name: &'static str, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var<'t, T>> {
        self.unary(name, |v| {
            let data = v.data().iter().map(|x| f(*x)).collect();
            Ok((Tensor::from_parts(v.shape().to_vec(), data), op))
        })
    }

    fn binary(
        self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<(Tensor<T>, Op<T>)>,
    ) -> Result<Var<'t, T>> {
        let (out, op, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (out, op) = f(&a.value, &b.value)?;
            (out, op, a.tracked || b.tracked)
        };
        ensure_finite(out.data(), name)?;
        Ok(self.tape.push(out, op, tracked))
    }

    /// `self · other`
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, false)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(self, other: Var<'t, T>, trans_b: bool) -> Result<Var<'t, T>> {
        let (a, b) = (self.id, other.id);
        self.binary(other, "matmul", |x, y| {
            if x.shape().len() != 2 || y.shape().len() != 2 {
                return Err(Error::shape("matmul", "operands must be rank 2"));
            }
            let (m, k) = (x.rows(), x.cols());
            let (kb, n) = if trans_b {
                (y.cols(), y.rows())
            } else {
                (y.rows(), y.cols())
            };
            if k != kb {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?} (trans_b={trans_b})", x.shape(), y.shape()),
                ));
            }
            let mut out = vec![T::zero(); m * n];
            if trans_b {
                matmul_nt(x.data(), y.data(), &mut out, m, k, n);
            } else {
                matmul_nn(x.data(), y.data(), &mut out, m, k, n);
            }
            Ok((Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, trans_b }))
        })
    }

    /// Same-shape addition, or a rank-1 right operand added to every row.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.id, other.id);
        self.binary(other, "add", |x, y| {
            if x.shape() == y.shape() {
                let data = x.data().iter().zip(y.data()).map(|(p, q)| *p + *q).collect();
                return Ok((
                    Tensor::from_parts(x.shape().to_vec(), data),
                    Op::Add {
                        a,
                        b,
                        row_broadcast: false,
                    },
                ));
            }
            if y.shape().len() == 1 && y.numel() == x.cols() {
                let c = x.cols();
                let mut data = x.data().to_vec();
                for row in data.chunks_exact_mut(c) {
                    for (p, q) in row.iter_mut().zip(y.data()) {
                        *p = *p + *q;
                    }
                }
                return Ok((
                    Tensor::from_parts(x.shape().to_vec(), data),
                    Op::Add {
                        a,
                        b,
                        row_broadcast: true,
                    },
                ));
            }
            Err(Error::shape("add", format!("{:?} + {:?}", x.shape(), y.shape())))
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.add(other.scale(-T::one())?)
    }

    /// Elementwise product; a single-element right operand broadcasts.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.id, other.id);
        self.binary(other, "mul", |x, y| {
            if x.shape() == y.shape() {
                let data = x.data().iter().zip(y.data()).map(|(p, q)| *p * *q).collect();
                return Ok((
                    Tensor::from_parts(x.shape().to_vec(), data),
                    Op::Mul { a, b, scalar_b: false },
                ));
            }
            if y.numel() == 1 {
                let s = y.item();
                let data = x.data().iter().map(|p| *p * s).collect();
                return Ok((
                    Tensor::from_parts(x.shape().to_vec(), data),
                    Op::Mul { a, b, scalar_b: true },
                ));
            }
            Err(Error::shape("mul", format!("{:?} * {:?}", x.shape(), y.shape())))
        })
    }

    pub fn scale(self, c: T) -> Result<Var<'t, T>> {
        let a = self.id;
        self.map("scale", Op::Scale { a, c }, |x| x * c)
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        let a = self.id;
        self.map("tanh", Op::Tanh(a), T::tanh)
    }

    /// Exact (erf) GELU.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        let a = self.id;
        self.map("gelu", Op::Gelu(a), gelu)
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        let a = self.id;
        self.unary("log", |v| {
            if v.data().iter().any(|x| *x <= T::zero()) {
                return Err(Error::invalid("log of non-positive value"));
            }
            let data = v.data().iter().map(|x| x.ln()).collect();
            Ok((Tensor::from_parts(v.shape().to_vec(), data), Op::Log(a)))
        })
    }

    pub fn clamp(self, lo: T, hi: T) -> Result<Var<'t, T>> {
        let a = self.id;
        self.map("clamp", Op::Clamp { a, lo, hi }, |x| x.max(lo).min(hi))
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let a = self.id;
        self.unary("sum", |v| {
            Ok((Tensor::scalar(v.data().iter().copied().sum()), Op::Sum(a)))
        })
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let a = self.id;
        self.unary("mean", |v| {
            if v.numel() == 0 {
                return Err(Error::shape("mean", "empty tensor"));
            }
            let s: T = v.data().iter().copied().sum();
            Ok((Tensor::scalar(s / T::lit(v.numel() as f64)), Op::Mean(a)))
        })
    }

    /// Row-wise layer normalisation with affine parameters.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let (x, gi, bi) = (self.id, gamma.id, beta.id);
        let (out, op, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let (xv, gv, bv) = (&nodes[x].value, &nodes[gi].value, &nodes[bi].value);
            let d = xv.cols();
            if gv.numel() != d || bv.numel() != d {
                return Err(Error::shape(
                    "layer_norm",
                    format!("width {d} vs affine {}", gv.numel()),
                ));
            }
            let dn = T::lit(d as f64);
            let mut out = Vec::with_capacity(xv.numel());
            let mut xhat = Vec::with_capacity(xv.numel());
            let mut inv_std = Vec::with_capacity(xv.rows());
            for row in xv.data().chunks_exact(d) {
                let mu = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() / dn;
                let s = T::one() / (var + eps).sqrt();
                inv_std.push(s);
                for j in 0..d {
                    let h = (row[j] - mu) * s;
                    xhat.push(h);
                    out.push(h * gv.data()[j] + bv.data()[j]);
                }
            }
            let tracked = nodes[x].tracked || nodes[gi].tracked || nodes[bi].tracked;
            (
                Tensor::from_parts(xv.shape().to_vec(), out),
                Op::LayerNorm {
                    x,
                    gamma: gi,
                    beta: bi,
                    xhat,
                    inv_std,
                },
                tracked,
            )
        };
        ensure_finite(out.data(), "layer_norm")?;
        Ok(self.tape.push(out, op, tracked))
    }

    /// Max-subtracted softmax over each row.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let a = self.id;
        self.unary("softmax", |v| {
            let d = v.cols();
            let mut out = Vec::with_capacity(v.numel());
            for row in v.data().chunks_exact(d) {
                out.extend(softmax_slice(row)?);
            }
            Ok((Tensor::from_parts(v.shape().to_vec(), out), Op::Softmax(a)))
        })
    }

    /// Divides each row by its L2 norm.
    pub fn l2_normalize(self) -> Result<Var<'t, T>> {
        let a = self.id;
        self.unary("l2_normalize", |v| {
            let d = v.cols();
            let mut out = Vec::with_capacity(v.numel());
            let mut norms = Vec::with_capacity(v.rows());
            for row in v.data().chunks_exact(d) {
                let n = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
                if n.as_f64() <= NORM_EPS {
                    return Err(Error::DegenerateNorm(n.as_f64()));
                }
                norms.push(n);
                out.extend(row.iter().map(|x| *x / n));
            }
            Ok((Tensor::from_parts(v.shape().to_vec(), out), Op::L2Norm { a, norms }))
        })
    }

    pub fn slice(self, axis: Axis, start: usize, len: usize) -> Result<Var<'t, T>> {
        let a = self.id;
        self.unary("slice", |v| {
            if v.shape().len() != 2 {
                return Err(Error::shape("slice", "operand must be rank 2"));
            }
            let (r, c) = (v.rows(), v.cols());
            match axis {
                Axis::Rows => {
                    if start + len > r {
                        return Err(Error::shape("slice", format!("rows {start}+{len} > {r}")));
                    }
                    let data = v.data()[start * c..(start + len) * c].to_vec();
                    Ok((Tensor::from_parts(vec![len, c], data), Op::Slice { a, axis, start }))
                }
                Axis::Cols => {
                    if start + len > c {
                        return Err(Error::shape("slice", format!("cols {start}+{len} > {c}")));
                    }
                    let mut data = Vec::with_capacity(r * len);
                    for i in 0..r {
                        data.extend_from_slice(&v.row(i)[start..start + len]);
                    }
                    Ok((Tensor::from_parts(vec![r, len], data), Op::Slice { a, axis, start }))
                }
            }
        })
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        self.slice(Axis::Rows, start, len)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        self.slice(Axis::Cols, start, len)
    }
}

/// Numerically stable softmax of one vector.
pub fn softmax_slice<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::shape("softmax", "empty input"));
    }
    ensure_finite(v, "softmax input")?;
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = v.iter().map(|x| (*x - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}
