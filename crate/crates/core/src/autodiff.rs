//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] hands out [`Var`]s. Every primitive applied through the tape
//! records the inputs and whatever activations its backward rule needs, so
//! that [`Tape::backward`] can walk the recorded DAG once in reverse creation
//! order. With recording disabled ([`Tape::inference`]) the same calls only
//! compute values and intermediates are freed as soon as they go out of
//! scope.
//!
//! The primitive set is closed: elementwise add/sub/mul (the right operand may
//! broadcast over leading axes), batched matmul, axis permutation, reshape,
//! relu, logistic, log, exp, clamp, softmax over an axis, layer norm over the
//! last axis, max-pool over an axis, dropout via a supplied mask, scalar
//! scale and full sum.

use std::cell::Cell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{gemm, matmul_forward, Tensor};

/// Handle of a trainable parameter inside a [`crate::optim::ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

const LAYER_NORM_EPS: f64 = 1e-5;

struct TapeInner {
    next_id: Cell<usize>,
    record: bool,
}

/// Records primitive applications for reverse-mode differentiation.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<TapeInner>,
}

/// A value produced on a [`Tape`].
#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    id: usize,
    value: Tensor,
    requires_grad: bool,
    param: Option<ParamId>,
    op: Option<Op>,
}

enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaxPool {
        x: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Scale(Var, f64),
    Sum(Var),
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<usize, Tensor>,
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf variable, or `None` when the leaf is unreachable.
    pub fn get(&self, leaf: &Var) -> Option<&Tensor> {
        self.by_leaf.get(&leaf.id())
    }

    /// Gradient of a parameter, or `None` when it did not influence the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn into_params(self) -> HashMap<ParamId, Tensor> {
        self.by_param
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that only evaluates values.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(record: bool) -> Self {
        Self {
            inner: Rc::new(TapeInner {
                next_id: Cell::new(0),
                record,
            }),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.inner.record
    }

    fn next_id(&self) -> usize {
        let id = self.inner.next_id.get();
        self.inner.next_id.set(id + 1);
        id
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var {
        self.leaf(value, self.inner.record, None)
    }

    /// A non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false, None)
    }

    /// A leaf bound to a stored parameter; its gradient is reported under `id`.
    pub fn param(&self, id: ParamId, value: Tensor) -> Var {
        self.leaf(value, self.inner.record, Some(id))
    }

    fn leaf(&self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        Var(Rc::new(Node {
            id: self.next_id(),
            value,
            requires_grad,
            param,
            op: None,
        }))
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op, inputs: &[&Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = self.inner.record && inputs.iter().any(|v| v.requires_grad());
        Ok(Var(Rc::new(Node {
            id: self.next_id(),
            value,
            requires_grad,
            param: None,
            op: requires_grad.then_some(op),
        })))
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        let out = broadcast_binary("add", a.value(), b.value(), |x, y| x + y)?;
        self.push("add", out, Op::Add(a.clone(), b.clone()), &[a, b])
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        let out = broadcast_binary("sub", a.value(), b.value(), |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a.clone(), b.clone()), &[a, b])
    }

    /// Elementwise product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        let out = broadcast_binary("mul", a.value(), b.value(), |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a.clone(), b.clone()), &[a, b])
    }

    /// Batched matrix product over the last two axes.
    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        let out = matmul_forward(a.value(), b.value())?;
        self.push("matmul", out, Op::MatMul(a.clone(), b.clone()), &[a, b])
    }

    /// Permute axes so that output axis `i` is input axis `perm[i]`.
    pub fn transpose(&self, x: &Var, perm: &[usize]) -> Result<Var> {
        let out = x.value().permute(perm)?;
        self.push("transpose", out, Op::Permute(x.clone(), perm.to_vec()), &[x])
    }

    pub fn reshape(&self, x: &Var, shape: &[usize]) -> Result<Var> {
        let out = x.value().clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x.clone()), &[x])
    }

    pub fn relu(&self, x: &Var) -> Result<Var> {
        let out = x.value().map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x.clone()), &[x])
    }

    pub fn sigmoid(&self, x: &Var) -> Result<Var> {
        let out = x.value().map(logistic);
        self.push("sigmoid", out, Op::Sigmoid(x.clone()), &[x])
    }

    pub fn log(&self, x: &Var) -> Result<Var> {
        let out = x.value().map(f64::ln);
        self.push("log", out, Op::Log(x.clone()), &[x])
    }

    pub fn exp(&self, x: &Var) -> Result<Var> {
        let out = x.value().map(f64::exp);
        self.push("exp", out, Op::Exp(x.clone()), &[x])
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&self, x: &Var, lo: f64, hi: f64) -> Result<Var> {
        let out = x.value().map(|v| v.clamp(lo, hi));
        self.push("clamp", out, Op::Clamp(x.clone(), lo, hi), &[x])
    }

    pub fn scale(&self, x: &Var, s: f64) -> Result<Var> {
        let out = x.value().map(|v| v * s);
        self.push("scale", out, Op::Scale(x.clone(), s), &[x])
    }

    pub fn sum(&self, x: &Var) -> Result<Var> {
        let out = Tensor::scalar(x.value().sum());
        self.push("sum", out, Op::Sum(x.clone()), &[x])
    }

    /// Multiply by a pre-sampled mask whose entries are `0` or `1/(1-rate)`.
    pub fn dropout(&self, x: &Var, mask: &Tensor) -> Result<Var> {
        if mask.shape() != x.shape() {
            return Err(Error::Shape {
                op: "dropout",
                lhs: x.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let m = self.constant(mask.clone());
        self.mul(x, &m)
    }

    pub fn softmax(&self, x: &Var, axis: usize) -> Result<Var> {
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(Error::Axis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = split_axis(shape, axis);
        let src = x.value().data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let max = (0..n).map(|k| src[base + k * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (src[base + k * inner] - max).exp();
                    out[base + k * inner] = e;
                    total += e;
                }
                for k in 0..n {
                    out[base + k * inner] /= total;
                }
            }
        }
        let out = Tensor::new(shape.to_vec(), out)?;
        self.push("softmax", out, Op::Softmax(x.clone(), axis), &[x])
    }

    /// Layer normalization over the last axis with learned gain and offset.
    pub fn layer_norm(&self, x: &Var, gain: &Var, offset: &Var) -> Result<Var> {
        let shape = x.shape();
        let k = *shape.last().ok_or(Error::Axis {
            op: "layer_norm",
            axis: 0,
            rank: 0,
        })?;
        if gain.shape() != [k] || offset.shape() != [k] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: shape.to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let src = x.value().data();
        let rows = src.len() / k.max(1);
        let g = gain.value().data();
        let b = offset.value().data();
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * k..(r + 1) * k];
            let mean = row.iter().sum::<f64>() / k as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for c in 0..k {
                let h = (row[c] - mean) * s;
                xhat[r * k + c] = h;
                out[r * k + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::new(shape.to_vec(), out)?;
        let op = Op::LayerNorm {
            x: x.clone(),
            gain: gain.clone(),
            offset: offset.clone(),
            xhat: if self.inner.record { xhat } else { Vec::new() },
            rstd: if self.inner.record { rstd } else { Vec::new() },
        };
        self.push("layer_norm", out, op, &[x, gain, offset])
    }

    /// Maximum over `axis`, removing that axis. Ties resolve to the first
    /// maximal index for the gradient; the value itself is order-free.
    pub fn max_pool(&self, x: &Var, axis: usize) -> Result<Var> {
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(Error::Axis {
                op: "max_pool",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = split_axis(shape, axis);
        if n == 0 {
            return Err(Error::Shape {
                op: "max_pool",
                lhs: shape.to_vec(),
                rhs: vec![axis],
            });
        }
        let src = x.value().data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut best = src[base];
                let mut best_k = 0;
                for k in 1..n {
                    let v = src[base + k * inner];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = best_k;
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let out = Tensor::new(out_shape, out)?;
        let op = Op::MaxPool {
            x: x.clone(),
            axis,
            argmax,
        };
        self.push("max_pool", out, op, &[x])
    }

    /// Gradients of the scalar `loss` with respect to every reachable leaf.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.value().len() != 1 || loss.shape().iter().any(|&s| s != 1) {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let mut result = Gradients::default();
        if !loss.requires_grad() {
            return Ok(result);
        }

        // Collect reachable recorded nodes; ids increase in creation order, so
        // descending id is a reverse topological order.
        let mut order: Vec<Var> = Vec::new();
        let mut seen: std::collections::HashSet<usize> = std::collections::HashSet::new();
        let mut stack = vec![loss.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            if let Some(op) = &v.0.op {
                stack.extend(op.inputs().into_iter().cloned());
            }
            order.push(v);
        }
        order.sort_by_key(|v| std::cmp::Reverse(v.id()));

        let mut grads: HashMap<usize, Tensor> = HashMap::new();
        grads.insert(loss.id(), Tensor::ones(loss.shape()));
        for v in &order {
            let Some(g) = grads.remove(&v.id()) else {
                continue;
            };
            match &v.0.op {
                None => {
                    if let Some(p) = v.0.param {
                        accumulate_into(&mut result.by_param, p, g.clone());
                    }
                    result.by_leaf.insert(v.id(), g);
                }
                Some(op) => op.backward(&v.0.value, &g, &mut grads)?,
            }
        }
        Ok(result)
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let ar = a.rank();
    let br = b.rank();
    if br > ar || a.shape()[ar - br..] != *b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let bd = b.data();
    let bl = bd.len();
    let data = a.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % bl])).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Sum `g` (shaped like the larger operand) down to the trailing `len` elements.
fn reduce_to_suffix(g: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for chunk in g.chunks(len) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn accumulate_into<K: std::hash::Hash + Eq>(map: &mut HashMap<K, Tensor>, key: K, g: Tensor) {
    match map.entry(key) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (a, b) in e.get_mut().data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(g);
        }
    }
}

fn send(grads: &mut HashMap<usize, Tensor>, to: &Var, g: Vec<f64>) -> Result<()> {
    if to.requires_grad() {
        let t = Tensor::new(to.shape().to_vec(), g)?;
        accumulate_into(grads, to.id(), t);
    }
    Ok(())
}

impl Op {
    fn inputs(&self) -> Vec<&Var> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Permute(x, _)
            | Op::Reshape(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::Clamp(x, _, _)
            | Op::Softmax(x, _)
            | Op::Scale(x, _)
            | Op::Sum(x) => vec![x],
            Op::LayerNorm { x, gain, offset, .. } => vec![x, gain, offset],
            Op::MaxPool { x, .. } => vec![x],
        }
    }

    fn backward(&self, out: &Tensor, g: &Tensor, grads: &mut HashMap<usize, Tensor>) -> Result<()> {
        let gd = g.data();
        match self {
            Op::Add(a, b) => {
                send(grads, a, gd.to_vec())?;
                if b.requires_grad() {
                    send(grads, b, reduce_to_suffix(gd, b.value().len()))?;
                }
            }
            Op::Sub(a, b) => {
                send(grads, a, gd.to_vec())?;
                if b.requires_grad() {
                    let r = reduce_to_suffix(gd, b.value().len());
                    send(grads, b, r.into_iter().map(|v| -v).collect())?;
                }
            }
            Op::Mul(a, b) => {
                let ad = a.value().data();
                let bd = b.value().data();
                let bl = bd.len();
                if a.requires_grad() {
                    send(grads, a, gd.iter().enumerate().map(|(i, g)| g * bd[i % bl]).collect())?;
                }
                if b.requires_grad() {
                    let prod: Vec<f64> = gd.iter().zip(ad).map(|(g, x)| g * x).collect();
                    send(grads, b, reduce_to_suffix(&prod, bl))?;
                }
            }
            Op::MatMul(a, b) => matmul_backward(a, b, g, grads)?,
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                send(grads, x, g.permute(&inv)?.into_data())?;
            }
            Op::Reshape(x) => send(grads, x, gd.to_vec())?,
            Op::Relu(x) => {
                let xd = x.value().data();
                send(grads, x, gd.iter().zip(xd).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect())?;
            }
            Op::Sigmoid(x) => {
                let yd = out.data();
                send(grads, x, gd.iter().zip(yd).map(|(g, y)| g * y * (1.0 - y)).collect())?;
            }
            Op::Log(x) => {
                let xd = x.value().data();
                send(grads, x, gd.iter().zip(xd).map(|(g, v)| g / v).collect())?;
            }
            Op::Exp(x) => {
                let yd = out.data();
                send(grads, x, gd.iter().zip(yd).map(|(g, y)| g * y).collect())?;
            }
            Op::Clamp(x, lo, hi) => {
                let xd = x.value().data();
                send(
                    grads,
                    x,
                    gd.iter()
                        .zip(xd)
                        .map(|(g, &v)| if v > *lo && v < *hi { *g } else { 0.0 })
                        .collect(),
                )?;
            }
            Op::Scale(x, s) => send(grads, x, gd.iter().map(|g| g * s).collect())?,
            Op::Sum(x) => send(grads, x, vec![gd[0]; x.value().len()])?,
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: f64 = (0..n).map(|k| gd[base + k * inner] * y[base + k * inner]).sum();
                        for k in 0..n {
                            let idx = base + k * inner;
                            dx[idx] = y[idx] * (gd[idx] - dot);
                        }
                    }
                }
                send(grads, x, dx)?;
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                rstd,
            } => {
                let k = *out.shape().last().unwrap_or(&1);
                let gv = gain.value().data();
                let rows = gd.len() / k.max(1);
                let mut dx = vec![0.0; gd.len()];
                let mut dgain = vec![0.0; k];
                let mut doff = vec![0.0; k];
                for r in 0..rows {
                    let gr = &gd[r * k..(r + 1) * k];
                    let hr = &xhat[r * k..(r + 1) * k];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..k {
                        let dh = gr[c] * gv[c];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[c];
                        dgain[c] += gr[c] * hr[c];
                        doff[c] += gr[c];
                    }
                    mean_dh /= k as f64;
                    mean_dh_h /= k as f64;
                    for c in 0..k {
                        let dh = gr[c] * gv[c];
                        dx[r * k + c] = rstd[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                    }
                }
                send(grads, x, dx)?;
                send(grads, gain, dgain)?;
                send(grads, offset, doff)?;
            }
            Op::MaxPool { x, axis, argmax } => {
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = argmax[o * inner + i];
                        dx[o * n * inner + k * inner + i] += gd[o * inner + i];
                    }
                }
                send(grads, x, dx)?;
            }
        }
        Ok(())
    }
}

fn matmul_backward(a: &Var, b: &Var, g: &Tensor, grads: &mut HashMap<usize, Tensor>) -> Result<()> {
    let av = a.value();
    let bv = b.value();
    let (m, k) = (av.shape()[av.rank() - 2], av.shape()[av.rank() - 1]);
    let n = bv.shape()[bv.rank() - 1];
    let batch = av.len() / (m * k).max(1);
    let shared_b = bv.rank() == 2;
    let gd = g.data();
    if a.requires_grad() {
        // dA = G · Bᵀ
        let mut da = vec![0.0; av.len()];
        for bi in 0..batch {
            let b_off = if shared_b { 0 } else { bi * k * n };
            gemm(
                m,
                n,
                k,
                &gd[bi * m * n..(bi + 1) * m * n],
                (n as isize, 1),
                &bv.data()[b_off..b_off + k * n],
                (1, n as isize),
                &mut da[bi * m * k..(bi + 1) * m * k],
                false,
            );
        }
        send(grads, a, da)?;
    }
    if b.requires_grad() {
        // dB = Aᵀ · G, summed over the batch when B is shared
        let mut db = vec![0.0; bv.len()];
        for bi in 0..batch {
            let b_off = if shared_b { 0 } else { bi * k * n };
            gemm(
                k,
                m,
                n,
                &av.data()[bi * m * k..(bi + 1) * m * k],
                (1, k as isize),
                &gd[bi * m * n..(bi + 1) * m * n],
                (n as isize, 1),
                &mut db[b_off..b_off + k * n],
                shared_b,
            );
        }
        send(grads, b, db)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn logistic_at_zero_is_half() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        assert_eq!(tape.sigmoid(&x).unwrap().value().item(), 0.5);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::new();
        let x = tape.var(t(&[3], &[1.7, 1.7, 1.7]));
        let y = tape.softmax(&x, 0).unwrap();
        for v in y.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let tape = Tape::new();
        let p = tape.var(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let loss = tape.sum(&p).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&p).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn logistic_derivative_at_zero_is_quarter() {
        let c = 3.5;
        let tape = Tape::new();
        let w = tape.var(Tensor::scalar(0.0));
        let s = tape.sigmoid(&w).unwrap();
        let loss = tape.scale(&s, c).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert!((g.get(&w).unwrap().item() - 0.25 * c).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let p = tape.var(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(&p), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreachable_leaf_has_no_gradient() {
        let tape = Tape::new();
        let p = tape.var(Tensor::zeros(&[2]));
        let q = tape.var(Tensor::zeros(&[2]));
        let loss = tape.sum(&p).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert!(g.get(&q).is_none());
    }

    #[test]
    fn shape_mismatch_names_op() {
        let tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 3]));
        let b = tape.var(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(&a, &b).unwrap_err();
        assert!(err.to_string().starts_with("matmul"), "{err}");
        let c = tape.var(Tensor::zeros(&[2]));
        assert!(tape.add(&a, &c).is_err());
    }

    #[test]
    fn log_of_zero_is_a_hard_error() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2]));
        assert!(matches!(tape.log(&x), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn suffix_broadcast_gradient_sums_leading_axes() {
        let tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[4, 3]));
        let b = tape.var(Tensor::zeros(&[3]));
        let s = tape.add(&a, &b).unwrap();
        let loss = tape.sum(&s).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&b).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn max_pool_takes_pure_maximum() {
        let tape = Tape::new();
        let x = tape.var(t(&[3, 2], &[1.0, 5.0, 4.0, 2.0, 4.0, 0.0]));
        let y = tape.max_pool(&x, 0).unwrap();
        assert_eq!(y.value().data(), &[4.0, 5.0]);
        let loss = tape.sum(&y).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::inference();
        let x = tape.var(Tensor::ones(&[2]));
        let y = tape.sum(&x).unwrap();
        assert!(!y.requires_grad());
        assert!(tape.backward(&y).unwrap().get(&x).is_none());
    }
}
