use std::borrow::Cow;

use super::kernels::{self, broadcast_index, broadcast_shape, permute_index};
use super::params::ParamId;
use super::{validate_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Softmax(Var),
    LogSoftmax(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskedFill { x: Var, mask: Vec<bool> },
    Dropout { x: Var, scale: Vec<f64> },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Embedding { .. } => "embedding",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MaskedFill { .. } => "masked_fill",
            Op::Dropout { .. } => "dropout",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Gradients of the parameters that took part in a graph, detached from it.
#[derive(Debug, Default)]
pub struct ParamGrads(pub(crate) Vec<(ParamId, Vec<f64>)>);

impl ParamGrads {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.0.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

/// Append-only computation tape. Nodes only ever reference earlier nodes,
/// so the graph is acyclic by construction and creation order is a valid
/// topological order.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes created by the operation `name` (e.g. `"sigmoid"`).
    pub fn count_op(&self, name: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.name() == name).count()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Leaf whose gradient is kept after [`Graph::backward`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub(crate) fn param_leaf(&mut self, t: &'a Tensor, id: ParamId, trainable: bool) -> Var {
        let v = self.push(Cow::Borrowed(t), Op::Leaf, trainable);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::shape(op, &sa, &sb))?;
        let da = self.value(a).data();
        let db = self.value(b).data();
        let data = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = broadcast_index(&out_shape, &sa);
            let ib = broadcast_index(&out_shape, &sb);
            ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        Ok(Tensor { shape: out_shape, data })
    }

    /// Elementwise sum with numpy broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.derived(t, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product with numpy broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|a| a * s).collect(),
        };
        self.derived(t, Op::Scale(x, s), &[x])
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| f(a)).collect(),
        };
        self.derived(t, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// Sets positions where `mask` is true to `value` (usually `-inf` before
    /// a softmax). Masked positions pass no gradient back.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var> {
        let v = self.value(x);
        if mask.len() != v.numel() {
            return Err(Error::shape("masked_fill", v.shape(), &[mask.len()]));
        }
        let data = v
            .data
            .iter()
            .zip(mask)
            .map(|(&a, &m)| if m { value } else { a })
            .collect();
        let t = Tensor {
            shape: v.shape.clone(),
            data,
        };
        Ok(self.derived(
            t,
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            &[x],
        ))
    }

    /// Inverted dropout with a caller-supplied keep mask.
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("rate {p} outside [0, 1)")));
        }
        let v = self.value(x);
        if keep.len() != v.numel() {
            return Err(Error::shape("dropout", v.shape(), &[keep.len()]));
        }
        let s = 1.0 / (1.0 - p);
        let scale: Vec<f64> = keep.iter().map(|&k| if k { s } else { 0.0 }).collect();
        let data = v.data.iter().zip(&scale).map(|(a, s)| a * s).collect();
        let t = Tensor {
            shape: v.shape.clone(),
            data,
        };
        Ok(self.derived(t, Op::Dropout { x, scale }, &[x]))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data.iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    // ---- linear algebra & shape --------------------------------------

    /// Batched matrix product `a[..., m, k] · b[..., k, n]`. A rank-2 `b`
    /// is shared across all leading axes of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = matmul_dims(&sa, &sb)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        let shared = sb.len() == 2;
        for bt in 0..batch {
            let bo = if shared { 0 } else { bt * k * n };
            kernels::gemm_nn(
                &da[bt * m * k..(bt + 1) * m * k],
                &db[bo..bo + k * n],
                &mut out[bt * m * n..(bt + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let t = Tensor { shape, data: out };
        Ok(self.derived(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::invalid("transpose", "needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("permute", format!("{perm:?} is not a permutation of the axes of {shape:?}")));
        }
        let (out_shape, map) = permute_index(&shape, perm);
        let d = self.value(x).data();
        let data = map.iter().map(|&i| d[i]).collect();
        let t = Tensor { shape: out_shape, data };
        Ok(self.derived(t, Op::Permute(x, perm.to_vec()), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        validate_shape("reshape", shape)?;
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(Error::shape("reshape", v.shape(), shape));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: v.data.clone(),
        };
        Ok(self.derived(t, Op::Reshape(x), &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor { shape, data };
        Ok(self.derived(t, Op::Concat(xs.to_vec(), axis), xs))
    }

    /// Slice `len` entries along `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid("narrow", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor { shape: out_shape, data };
        Ok(self.derived(t, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Rows of `table[V, d]` selected by `ids`; output shape is
    /// `ids_shape ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::invalid("embedding", format!("table must be rank 2, got {ts:?}")));
        }
        if ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::shape("embedding", ids_shape, &[ids.len()]));
        }
        let (vocab, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::invalid("embedding", format!("id {bad} outside table of {vocab} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        validate_shape("embedding", &shape)?;
        let t = Tensor { shape, data };
        Ok(self.derived(t, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    // ---- normalisation ----------------------------------------------

    /// Softmax over the last axis. A row that is entirely `-inf` yields zeros.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let d = v.last_dim();
        let mut data = vec![0.0; v.numel()];
        for (row, out) in v.data.chunks(d).zip(data.chunks_mut(d)) {
            kernels::softmax_row(row, out);
        }
        let t = Tensor {
            shape: v.shape.clone(),
            data,
        };
        self.derived(t, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let d = v.last_dim();
        let mut data = vec![0.0; v.numel()];
        for (row, out) in v.data.chunks(d).zip(data.chunks_mut(d)) {
            kernels::log_softmax_row(row, out);
        }
        let t = Tensor {
            shape: v.shape.clone(),
            data,
        };
        self.derived(t, Op::LogSoftmax(x), &[x])
    }

    /// Layer normalisation over the last axis, `eps` inside the square root.
    /// A constant row normalises to zeros before the affine transform.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::shape("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let v = self.value(x);
        let rows = v.numel() / d;
        let mut xhat = vec![0.0; v.numel()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &v.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, a) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (a - mean) * is;
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * g[i % d] + b[i % d])
            .collect();
        let t = Tensor {
            shape: v.shape.clone(),
            data,
        };
        Ok(self.derived(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    // ---- reverse pass --------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`. Afterwards [`Graph::grad`]
    /// holds d(loss)/d(node) for every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Ops are moved out temporarily so the node list can be mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &x in [a, b] {
                    let map = self.reduce_map(i, x);
                    self.acc(x, |gx| match map {
                        None => gx.iter_mut().zip(g).for_each(|(o, v)| *o += v),
                        Some(m) => m.iter().zip(g).for_each(|(&j, v)| gx[j] += v),
                    });
                }
            }
            Op::Mul(a, b) => {
                for (&x, &other) in [(a, b), (b, a)] {
                    if !self.nodes[x.0].requires_grad {
                        continue;
                    }
                    let out_shape = self.nodes[i].value.shape.clone();
                    let ox = broadcast_index(&out_shape, self.shape(x));
                    let oo = broadcast_index(&out_shape, self.shape(other));
                    let od = self.value(other).data.clone();
                    self.acc(x, |gx| {
                        for k in 0..g.len() {
                            gx[ox[k]] += g[k] * od[oo[k]];
                        }
                    });
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.acc(*x, |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * s));
            }
            Op::MatMul(a, b) => self.backprop_matmul(*a, *b, g),
            Op::Permute(x, perm) => {
                let (_, map) = permute_index(self.shape(*x), perm);
                self.acc(*x, |gx| map.iter().zip(g).for_each(|(&j, v)| gx[j] += v));
            }
            Op::Reshape(x) => {
                self.acc(*x, |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v));
            }
            Op::Concat(xs, axis) => {
                let shape = self.nodes[i].value.shape.clone();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut off = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis] * inner;
                    self.acc(x, |gx| {
                        for o in 0..outer {
                            let src = &g[o * total + off..o * total + off + len];
                            gx[o * len..(o + 1) * len].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                        }
                    });
                    off += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (axis, start) = (*axis, *start);
                let in_shape = self.shape(*x).to_vec();
                let len = self.nodes[i].value.shape[axis];
                let outer: usize = in_shape[..axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                self.acc(*x, |gx| {
                    for o in 0..outer {
                        let off = (o * in_shape[axis] + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        gx[off..off + len * inner].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                self.acc(*table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = self.nodes[i].value.data.clone();
                let d = self.nodes[i].value.last_dim();
                self.acc(*x, |gx| {
                    for ((yr, gr), xr) in y.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..d {
                            xr[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = self.nodes[i].value.data.clone();
                let d = self.nodes[i].value.last_dim();
                self.acc(*x, |gx| {
                    for ((yr, gr), xr) in y.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
                        let total: f64 = gr.iter().sum();
                        for k in 0..d {
                            xr[k] += gr[k] - yr[k].exp() * total;
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data.clone();
                self.acc(*x, |gx| {
                    for k in 0..g.len() {
                        if xv[k] > 0.0 {
                            gx[k] += g[k];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data.clone();
                self.acc(*x, |gx| {
                    for k in 0..g.len() {
                        gx[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.data.clone();
                self.acc(*x, |gx| {
                    for k in 0..g.len() {
                        gx[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.shape(*gamma)[0];
                let gm = self.value(*gamma).data.clone();
                self.acc(*gamma, |gg| {
                    for k in 0..g.len() {
                        gg[k % d] += g[k] * xhat[k];
                    }
                });
                self.acc(*beta, |gb| {
                    for k in 0..g.len() {
                        gb[k % d] += g[k];
                    }
                });
                self.acc(*x, |gx| {
                    let n = d as f64;
                    for (r, &is) in inv_std.iter().enumerate() {
                        let rg = &g[r * d..(r + 1) * d];
                        let rh = &xhat[r * d..(r + 1) * d];
                        let dxhat: Vec<f64> = rg.iter().zip(&gm).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(rh).map(|(a, b)| a * b).sum();
                        for k in 0..d {
                            gx[r * d + k] += is / n * (n * dxhat[k] - s1 - rh[k] * s2);
                        }
                    }
                });
            }
            Op::MaskedFill { x, mask } => {
                self.acc(*x, |gx| {
                    for k in 0..g.len() {
                        if !mask[k] {
                            gx[k] += g[k];
                        }
                    }
                });
            }
            Op::Dropout { x, scale } => {
                self.acc(*x, |gx| {
                    for k in 0..g.len() {
                        gx[k] += g[k] * scale[k];
                    }
                });
            }
            Op::Sum(x) => {
                let s = g[0];
                self.acc(*x, |gx| gx.iter_mut().for_each(|o| *o += s));
            }
        }
        self.nodes[i].op = op;
    }

    /// Index map from the output of node `i` back into a broadcast input,
    /// or `None` when shapes already agree.
    fn reduce_map(&self, i: usize, x: Var) -> Option<Vec<usize>> {
        let out = &self.nodes[i].value.shape;
        let sx = self.shape(x);
        if out.as_slice() == sx {
            None
        } else {
            Some(broadcast_index(out, sx))
        }
    }

    fn backprop_matmul(&mut self, a: Var, b: Var, g: &[f64]) {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = matmul_dims(&sa, &sb).expect("validated in forward");
        let shared = sb.len() == 2;
        if self.nodes[a.0].requires_grad {
            let bd = self.value(b).data.clone();
            self.acc(a, |ga| {
                for bt in 0..batch {
                    let bo = if shared { 0 } else { bt * k * n };
                    kernels::gemm_nt(
                        &g[bt * m * n..(bt + 1) * m * n],
                        &bd[bo..bo + k * n],
                        &mut ga[bt * m * k..(bt + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            });
        }
        if self.nodes[b.0].requires_grad {
            let ad = self.value(a).data.clone();
            self.acc(b, |gb| {
                for bt in 0..batch {
                    let bo = if shared { 0 } else { bt * k * n };
                    kernels::gemm_tn(
                        &ad[bt * m * k..(bt + 1) * m * k],
                        &g[bt * m * n..(bt + 1) * m * n],
                        &mut gb[bo..bo + k * n],
                        m,
                        k,
                        n,
                    );
                }
            });
        }
    }

    /// Moves the gradients of parameter leaves out of the graph.
    pub fn take_param_grads(&mut self) -> ParamGrads {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, self.grads.get_mut(i).and_then(Option::take)) {
                out.push((id, g));
            }
        }
        ParamGrads(out)
    }
}

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if sa.len() < 2 || sb.len() < 2 {
        return Err(Error::shape("matmul", sa, sb));
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    let lead_a = &sa[..sa.len() - 2];
    let lead_b = &sb[..sb.len() - 2];
    if k != kb || (!lead_b.is_empty() && lead_a != lead_b) {
        return Err(Error::shape("matmul", sa, sb));
    }
    Ok((lead_a.iter().product(), m, k, n))
}
