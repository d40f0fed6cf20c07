//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters live in
//! a [`ParamStore`] outside the graph; [`Graph::param`] copies a parameter onto
//! the tape as a leaf and [`Graph::backward`] returns the gradient of a scalar
//! with respect to every recorded node.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::fft;
use crate::tensor::{axis_extents, gemm, strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in registration order.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Round every value to the nearest `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.values {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Bcast {
    /// The smaller operand's shape is a suffix of the larger one's.
    Suffix,
    /// The smaller operand's shape is a prefix of the larger one's.
    Prefix,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    BcastAdd(Var, Var, Bcast),
    BcastMul(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul { a: Var, b: Var, trans_b: bool },
    Bmm { a: Var, b: Var, trans_b: bool },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    IndexSelect(Var, Vec<usize>),
    Slice { x: Var, axis: usize, start: usize },
    SumAxis(Var, usize),
    SumAll(Var),
    Softmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Ln(Var),
    Recip(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
    Square(Var),
    PickLast(Var, Vec<usize>),
    Rfft { x: Var, imag: bool },
    Irfft { re: Var, im: Var },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a parameter that took part in the forward pass.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.wrt(*v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> {
        self.params.iter().map(|(p, v)| (*p, self.grads[v.0].as_ref()))
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Places a parameter on the tape. Repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    /// Parameters that were placed on this tape, in id order.
    pub fn used_params(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<_> = self.params.iter().map(|(p, v)| (*p, *v)).collect();
        out.sort();
        out
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        Tensor::from_parts(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_map(a, b, |p, q| p + q);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_map(a, b, |p, q| p - q);
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_map(a, b, |p, q| p * q);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn check_bcast(&self, a: Var, b: Var, mode: Bcast) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sb.len() <= sa.len()
            && match mode {
                Bcast::Suffix => sa[sa.len() - sb.len()..] == *sb,
                Bcast::Prefix => sa[..sb.len()] == *sb,
            };
        if ok {
            Ok(())
        } else {
            shape_err(format!("cannot broadcast {sb:?} against {sa:?} ({mode:?})"))
        }
    }

    fn bcast_apply(&self, a: Var, b: Var, mode: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let nb = y.len().max(1);
        let inner = (x.len() / nb).max(1);
        let data = match mode {
            Bcast::Suffix => x.data().iter().enumerate().map(|(i, &p)| f(p, y.data()[i % nb])).collect(),
            Bcast::Prefix => x.data().iter().enumerate().map(|(i, &p)| f(p, y.data()[i / inner])).collect(),
        };
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    fn bcast(&mut self, a: Var, b: Var, mode: Bcast, mul: bool) -> Result<Var> {
        self.check_bcast(a, b, mode)?;
        if mul {
            let t = self.bcast_apply(a, b, mode, |p, q| p * q);
            Ok(self.push(t, Op::BcastMul(a, b, mode)))
        } else {
            let t = self.bcast_apply(a, b, mode, |p, q| p + q);
            Ok(self.push(t, Op::BcastAdd(a, b, mode)))
        }
    }

    /// `a + b` with `b` repeated over the leading axes of `a` (e.g. a bias).
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast(a, b, Bcast::Suffix, false)
    }

    /// `a * b` with `b` repeated over the leading axes of `a`.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast(a, b, Bcast::Suffix, true)
    }

    /// `a + b` with `b` repeated over the trailing axes of `a`.
    pub fn add_prefix(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast(a, b, Bcast::Prefix, false)
    }

    /// `a * b` with `b` repeated over the trailing axes of `a`.
    pub fn mul_prefix(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast(a, b, Bcast::Prefix, true)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v + c);
        self.push(t, Op::AddScalar(a))
    }

    /// `a · b` with `a` of shape `[.., k]` and `b` of shape `[k, n]`
    /// (or `[n, k]` when `trans_b`).
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() {
            return shape_err(format!("matmul: {sa:?} x {sb:?}"));
        }
        let k = *sa.last().unwrap();
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return shape_err(format!("matmul inner dims: {sa:?} x {sb:?} (trans_b={trans_b})"));
        }
        let m = self.value(a).len() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b, trans_b }))
    }

    /// Batched product of `[g, m, k]` and `[g, k, n]` (or `[g, n, k]` when `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return shape_err(format!("bmm: {sa:?} x {sb:?}"));
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return shape_err(format!("bmm inner dims: {sa:?} x {sb:?} (trans_b={trans_b})"));
        }
        let mut out = vec![0.0; g * m * n];
        let (x, y) = (self.value(a).data(), self.value(b).data());
        for i in 0..g {
            gemm(
                m,
                k,
                n,
                &x[i * m * k..(i + 1) * m * k],
                false,
                &y[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(self.push(Tensor::from_parts(vec![g, m, n], out), Op::Bmm { a, b, trans_b }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return shape_err(format!("permute {axes:?} of {shape:?}"));
        }
        let t = permute_tensor(self.value(a), axes);
        Ok(self.push(t, Op::Permute(a, axes.to_vec())))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return shape_err(format!("concat axis {axis} of {base:?}"));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return shape_err(format!("concat: {s:?} vs {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec(), axis)))
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut lifted = Vec::with_capacity(parts.len());
        for p in parts {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(*p));
            lifted.push(self.reshape(*p, &s)?);
        }
        self.concat(&lifted, 0)
    }

    /// Rows of `a` (leading axis) at `indices`, with repetition allowed.
    pub fn index_select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let rows = v.shape()[0];
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return shape_err(format!("index {bad} out of {rows} rows"));
        }
        let inner = v.len() / rows.max(1);
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&v.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = indices.len();
        Ok(self.push(Tensor::from_parts(shape, data), Op::IndexSelect(a, indices.to_vec())))
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return shape_err(format!("slice {start}..{end} on axis {axis} of {shape:?}"));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let width = (end - start) * inner;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            data.extend_from_slice(&src[base..base + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Slice { x: a, axis, start }))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("sum axis {axis} of {shape:?}"));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &src[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::SumAxis(a, axis)))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = self.shape(a).get(axis).copied().unwrap_or(1);
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = *v.shape().last().unwrap_or(&1);
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(t, Op::Softmax(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(t, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(softplus);
        self.push(t, Op::Softplus(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Ln(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| 1.0 / v);
        self.push(t, Op::Recip(a))
    }

    /// Square root whose derivative is taken as zero at the origin.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::sqrt);
        self.push(t, Op::Sqrt(a))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let t = self.value(a).map(|v| v.max(floor));
        self.push(t, Op::ClampMin(a, floor))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v * v);
        self.push(t, Op::Square(a))
    }

    /// `out[i] = a[i, idx[i]]` for a 2-D `a`.
    pub fn pick_last(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if v.ndim() != 2 || v.shape()[0] != idx.len() || idx.iter().any(|&j| j >= v.shape()[1]) {
            return shape_err(format!("pick_last on {:?} with {} indices", v.shape(), idx.len()));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| v.at2(i, j)).collect();
        let t = Tensor::from_parts(vec![idx.len()], data);
        Ok(self.push(t, Op::PickLast(a, idx.to_vec())))
    }

    /// Real (or imaginary) part of the one-sided DFT over the last axis.
    pub fn rfft(&mut self, x: Var, imag: bool) -> Result<Var> {
        let v = self.value(x);
        let n = *v.shape().last().unwrap_or(&0);
        if n < 2 {
            return shape_err(format!("rfft needs at least 2 samples, got {:?}", v.shape()));
        }
        let (re, im) = fft::rfft_rows(v.data(), n);
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = n / 2 + 1;
        let t = Tensor::from_parts(shape, if imag { im } else { re });
        Ok(self.push(t, Op::Rfft { x, imag }))
    }

    /// Inverse of the one-sided DFT over the last axis, producing `len` samples.
    /// Imaginary parts of the DC and Nyquist bins are ignored.
    pub fn irfft(&mut self, re: Var, im: Var, len: usize) -> Result<Var> {
        self.same_shape(re, im, "irfft")?;
        let f = *self.shape(re).last().unwrap_or(&0);
        if f != len / 2 + 1 {
            return shape_err(format!("irfft: {f} bins cannot come from {len} samples"));
        }
        let data = fft::irfft_rows(self.value(re).data(), self.value(im).data(), len);
        let mut shape = self.shape(re).to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.push(Tensor::from_parts(shape, data), Op::Irfft { re, im }))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_parts(self.shape(loss).to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params: self.used_params() })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (x, z) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, elementwise(g, z, |p, q| p * q));
                accumulate(grads, *b, elementwise(g, x, |p, q| p * q));
            }
            Op::BcastAdd(a, b, mode) => {
                accumulate(grads, *a, g.clone());
                let gb = reduce_bcast(gd, self.value(*b), *mode);
                accumulate(grads, *b, gb);
            }
            Op::BcastMul(a, b, mode) => {
                let (x, z) = (self.value(*a), self.value(*b));
                let nb = z.len().max(1);
                let inner = (x.len() / nb).max(1);
                let zi = |k: usize| match mode {
                    Bcast::Suffix => z.data()[k % nb],
                    Bcast::Prefix => z.data()[k / inner],
                };
                let ga =
                    Tensor::from_parts(x.shape().to_vec(), gd.iter().enumerate().map(|(k, &v)| v * zi(k)).collect());
                accumulate(grads, *a, ga);
                let prod: Vec<f64> = gd.iter().zip(x.data()).map(|(p, q)| p * q).collect();
                accumulate(grads, *b, reduce_bcast(&prod, z, *mode));
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::MatMul { a, b, trans_b } => {
                let (x, w) = (self.value(*a), self.value(*b));
                let k = *x.shape().last().unwrap();
                let m = x.len() / k.max(1);
                let n = *y.shape().last().unwrap();
                let mut ga = vec![0.0; m * k];
                // dA = dC · Bᵀ
                gemm(m, n, k, gd, false, w.data(), !trans_b, &mut ga, false);
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), ga));
                let mut gw = vec![0.0; k * n];
                if *trans_b {
                    gemm(n, m, k, gd, true, x.data(), false, &mut gw, false);
                } else {
                    gemm(k, m, n, x.data(), true, gd, false, &mut gw, false);
                }
                accumulate(grads, *b, Tensor::from_parts(w.shape().to_vec(), gw));
            }
            Op::Bmm { a, b, trans_b } => {
                let (x, w) = (self.value(*a), self.value(*b));
                let (gn, m, k) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let n = y.shape()[2];
                let mut ga = vec![0.0; gn * m * k];
                let mut gw = vec![0.0; gn * k * n];
                for t in 0..gn {
                    let gs = &gd[t * m * n..(t + 1) * m * n];
                    let xs = &x.data()[t * m * k..(t + 1) * m * k];
                    let ws = &w.data()[t * k * n..(t + 1) * k * n];
                    gemm(m, n, k, gs, false, ws, !trans_b, &mut ga[t * m * k..(t + 1) * m * k], false);
                    let out = &mut gw[t * k * n..(t + 1) * k * n];
                    if *trans_b {
                        gemm(n, m, k, gs, true, xs, false, out, false);
                    } else {
                        gemm(k, m, n, xs, true, gs, false, out, false);
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), ga));
                accumulate(grads, *b, Tensor::from_parts(w.shape().to_vec(), gw));
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                accumulate(grads, *a, Tensor::from_parts(shape, gd.to_vec()));
            }
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                accumulate(grads, *a, permute_tensor(g, &inv));
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_extents(y.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let s = self.shape(*p).to_vec();
                    let len = s[*axis];
                    let mut data = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    offset += len;
                    accumulate(grads, *p, Tensor::from_parts(s, data));
                }
            }
            Op::IndexSelect(a, idx) => {
                let x = self.value(*a);
                let inner = x.len() / x.shape()[0].max(1);
                let mut ga = vec![0.0; x.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..inner {
                        ga[src * inner + c] += gd[r * inner + c];
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), ga));
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.shape(*x).to_vec();
                let (outer, len, inner) = axis_extents(&src_shape, *axis);
                let width = y.shape()[*axis] * inner;
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let base = o * len * inner + start * inner;
                    gx[base..base + width].copy_from_slice(&gd[o * width..(o + 1) * width]);
                }
                accumulate(grads, *x, Tensor::from_parts(src_shape, gx));
            }
            Op::SumAxis(a, axis) => {
                let src_shape = self.shape(*a).to_vec();
                let (outer, len, inner) = axis_extents(&src_shape, *axis);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let dst = (o * len + k) * inner;
                        gx[dst..dst + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(src_shape, gx));
            }
            Op::SumAll(a) => {
                let s = self.shape(*a).to_vec();
                accumulate(grads, *a, Tensor::full(&s, gd[0]));
            }
            Op::Softmax(a) => {
                let n = *y.shape().last().unwrap_or(&1);
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), out) in y.data().chunks(n).zip(gd.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, &p), &q) in out.iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::Sigmoid(a) => accumulate(grads, *a, elementwise(g, y, |p, s| p * s * (1.0 - s))),
            Op::Tanh(a) => accumulate(grads, *a, elementwise(g, y, |p, t| p * (1.0 - t * t))),
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |p, v| if v > 0.0 { p } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |p, v| if v > 0.0 { p } else { slope * p }));
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |p, v| p * sigmoid(v)));
            }
            Op::Ln(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |p, v| p / v));
            }
            Op::Recip(a) => accumulate(grads, *a, elementwise(g, y, |p, r| -p * r * r)),
            Op::Sqrt(a) => accumulate(grads, *a, elementwise(g, y, |p, s| if s > 0.0 { 0.5 * p / s } else { 0.0 })),
            Op::ClampMin(a, floor) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |p, v| if v >= *floor { p } else { 0.0 }));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |p, v| 2.0 * p * v));
            }
            Op::PickLast(a, idx) => {
                let x = self.value(*a);
                let k = x.shape()[1];
                let mut gx = vec![0.0; x.len()];
                for (r, &j) in idx.iter().enumerate() {
                    gx[r * k + j] += gd[r];
                }
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), gx));
            }
            Op::Rfft { x, imag } => {
                let n = *self.shape(*x).last().unwrap();
                let zeros = vec![0.0; gd.len()];
                let gx =
                    if *imag { fft::rfft_rows_adjoint(&zeros, gd, n) } else { fft::rfft_rows_adjoint(gd, &zeros, n) };
                accumulate(grads, *x, Tensor::from_parts(self.shape(*x).to_vec(), gx));
            }
            Op::Irfft { re, im } => {
                let n = *y.shape().last().unwrap();
                let (gre, gim) = fft::irfft_rows_adjoint(gd, n);
                let s = self.shape(*re).to_vec();
                accumulate(grads, *re, Tensor::from_parts(s.clone(), gre));
                accumulate(grads, *im, Tensor::from_parts(s, gim));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(g.shape().to_vec(), g.data().iter().zip(other.data()).map(|(&p, &q)| f(p, q)).collect())
}

fn reduce_bcast(g: &[f64], target: &Tensor, mode: Bcast) -> Tensor {
    let nb = target.len().max(1);
    let mut out = vec![0.0; target.len()];
    match mode {
        Bcast::Suffix => {
            for (k, v) in g.iter().enumerate() {
                out[k % nb] += v;
            }
        }
        Bcast::Prefix => {
            let inner = (g.len() / nb).max(1);
            for (k, v) in g.iter().enumerate() {
                out[k / inner] += v;
            }
        }
    }
    Tensor::from_parts(target.shape().to_vec(), out)
}

fn permute_tensor(t: &Tensor, axes: &[usize]) -> Tensor {
    let shape = t.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    // stride in the source for each output axis
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = t.len();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let src = t.data();
    for _ in 0..n {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        data.push(src[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_parts(out_shape, data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
