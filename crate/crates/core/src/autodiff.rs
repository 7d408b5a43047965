//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! return [`Var`] handles; an operation is recorded for the reverse pass only
//! when at least one of its inputs requires a gradient. Nodes are appended in
//! execution order, so the reverse pass is a single backwards sweep.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    Concat { parts: Vec<usize>, axis: usize },
    Sum { x: usize, axis: usize },
    Mean { x: usize, axis: usize },
    SumAll(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Slice { x: usize, axis: usize, start: usize, len: usize },
    Gather { x: usize, index: Vec<usize> },
    SegmentMean { x: usize, segment: Vec<usize>, counts: Vec<usize> },
    Linear { x: usize, w: usize, b: usize },
    LstmGates(usize),
    LstmCellState { gates: usize, c_prev: usize },
    LstmHidden { gates: usize, c: usize, tanh_c: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    // Four output rows share each load of a row of `b`.
    let mut i = 0;
    while i + 4 <= m {
        let (r0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for ((((o0, o1), o2), o3), &bv) in r0.iter_mut().zip(r1.iter_mut()).zip(r2.iter_mut()).zip(r3.iter_mut()).zip(brow) {
                *o0 += a0 * bv;
                *o1 += a1 * bv;
                *o2 += a2 * bv;
                *o3 += a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (xs, ys) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += xs[l] * ys[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears all recorded values so the tape can serve the next step.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that does not take part in differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
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

    /// Gradient of the last backward pass with respect to `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| f(*x)).collect())
            .expect("same shape")
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a.0, b.0), rg))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.map(a, |x| x * factor);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a.0, factor), rg)
    }

    /// Adds a row vector (`[C]` or `[1, C]`) to every row of an `[R, C]` matrix.
    pub fn broadcast_add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        let c = *sr.last().unwrap_or(&0);
        let row_ok = sr.len() == 1 || (sr.len() == 2 && sr[0] == 1);
        if sx.len() != 2 || !row_ok || sx[1] != c {
            return Err(Error::Shape {
                op: "broadcast_add_row",
                lhs: sx.to_vec(),
                rhs: sr.to_vec(),
            });
        }
        let mut out = self.value(x).clone();
        let r = self.value(row).data();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (o, v) in chunk.iter_mut().zip(r) {
                *o += v;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x.0, row.0), rg))
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", "axis out of range"));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|p| self.rg(*p));
        let t = Tensor::new(shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            rg,
        ))
    }

    fn reduce(&self, op: &'static str, x: Var, axis: usize, mean: bool) -> Result<Tensor> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(invalid(op, "axis out of range"));
        }
        let (outer, n, inner) = split_axis(s, axis);
        let mut out = vec![0.0; outer * inner];
        let d = self.value(x).data();
        for o in 0..outer {
            for j in 0..n {
                let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        if mean && n > 0 {
            let inv = 1.0 / n as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        Tensor::new(shape, out)
    }

    /// Sum over `axis`; the axis is removed from the result shape.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.reduce("sum", x, axis, false)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Sum { x: x.0, axis }, rg))
    }

    /// Mean over `axis`; an empty axis yields zeros.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.reduce("mean", x, axis, true)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Mean { x: x.0, axis }, rg))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x.0), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, math::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x.0), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, math::sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x.0), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(t, Op::Relu(x.0), rg)
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: s,
                rhs: vec![axis, start, len],
            });
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Slice {
                x: x.0,
                axis,
                start,
                len,
            },
            rg,
        ))
    }

    /// Selects rows of a 2-D tensor: `out[i] = x[index[i]]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(invalid("gather_rows", "expects a 2-D tensor"));
        }
        let (rows, c) = (s[0], s[1]);
        if let Some(bad) = index.iter().find(|&&i| i >= rows) {
            return Err(invalid(
                "gather_rows",
                alloc::format!("row {bad} out of range for {rows} rows"),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let t = Tensor::matrix(index.len(), c, data);
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Gather {
                x: x.0,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Averages rows of `x` that share a segment id; segments without rows are zero.
    pub fn segment_mean(&mut self, x: Var, segment: &[usize], segments: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != segment.len() {
            return Err(Error::Shape {
                op: "segment_mean",
                lhs: s,
                rhs: vec![segment.len()],
            });
        }
        let c = s[1];
        let mut counts = vec![0usize; segments];
        for &g in segment {
            if g >= segments {
                return Err(invalid("segment_mean", "segment id out of range"));
            }
            counts[g] += 1;
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; segments * c];
        for (e, &g) in segment.iter().enumerate() {
            for (o, v) in out[g * c..(g + 1) * c].iter_mut().zip(&src[e * c..(e + 1) * c]) {
                *o += v;
            }
        }
        for (g, &n) in counts.iter().enumerate() {
            if n > 1 {
                let inv = 1.0 / n as f64;
                out[g * c..(g + 1) * c].iter_mut().for_each(|v| *v *= inv);
            }
        }
        let t = Tensor::matrix(segments, c, out);
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::SegmentMean {
                x: x.0,
                segment: segment.to_vec(),
                counts,
            },
            rg,
        ))
    }

    /// `x · w + b` for `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] || sb != [sw[1]] {
            return Err(Error::Shape {
                op: "linear",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        matmul_into(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::Linear { x: x.0, w: w.0, b: b.0 }, rg))
    }

    /// LSTM gate activations of fused pre-activations `z: [rows, 4H]`:
    /// sigmoid on the input, forget and output blocks, tanh on the candidate.
    pub fn lstm_gates(&mut self, z: Var) -> Result<Var> {
        let s = self.shape(z);
        if s.len() != 2 || s[1] % 4 != 0 {
            return Err(Error::Shape {
                op: "lstm_gates",
                lhs: s.to_vec(),
                rhs: vec![4],
            });
        }
        let h = s[1] / 4;
        let mut t = self.value(z).clone();
        for (j, block) in t.data_mut().chunks_mut(h).enumerate() {
            if j % 4 == 2 {
                block.iter_mut().for_each(|v| *v = math::tanh(*v));
            } else {
                block.iter_mut().for_each(|v| *v = math::sigmoid(*v));
            }
        }
        let rg = self.rg(z);
        Ok(self.push(t, Op::LstmGates(z.0), rg))
    }

    /// `c = f ⊙ c_prev + i ⊙ g` from activated gates `[rows, 4H]`.
    pub fn lstm_cell_state(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (sg, sc) = (self.shape(gates), self.shape(c_prev));
        if sg.len() != 2 || sc.len() != 2 || sg[0] != sc[0] || sg[1] != 4 * sc[1] {
            return Err(Error::Shape {
                op: "lstm_cell_state",
                lhs: sg.to_vec(),
                rhs: sc.to_vec(),
            });
        }
        let (rows, h) = (sc[0], sc[1]);
        let (a, cp) = (self.value(gates).data(), self.value(c_prev).data());
        let mut out = Vec::with_capacity(rows * h);
        for r in 0..rows {
            let g = &a[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                out.push(g[h + j] * cp[r * h + j] + g[j] * g[2 * h + j]);
            }
        }
        let rg = self.rg(gates) || self.rg(c_prev);
        Ok(self.push(
            Tensor::matrix(rows, h, out),
            Op::LstmCellState {
                gates: gates.0,
                c_prev: c_prev.0,
            },
            rg,
        ))
    }

    /// `h = o ⊙ tanh(c)` from activated gates `[rows, 4H]`.
    pub fn lstm_hidden(&mut self, gates: Var, c: Var) -> Result<Var> {
        let (sg, sc) = (self.shape(gates), self.shape(c));
        if sg.len() != 2 || sc.len() != 2 || sg[0] != sc[0] || sg[1] != 4 * sc[1] {
            return Err(Error::Shape {
                op: "lstm_hidden",
                lhs: sg.to_vec(),
                rhs: sc.to_vec(),
            });
        }
        let (rows, h) = (sc[0], sc[1]);
        let tanh_c: Vec<f64> = self.value(c).data().iter().map(|v| math::tanh(*v)).collect();
        let a = self.value(gates).data();
        let mut out = Vec::with_capacity(rows * h);
        for r in 0..rows {
            for j in 0..h {
                out.push(a[r * 4 * h + 3 * h + j] * tanh_c[r * h + j]);
            }
        }
        let rg = self.rg(gates) || self.rg(c);
        let op = if rg {
            Op::LstmHidden {
                gates: gates.0,
                c: c.0,
                tanh_c,
            }
        } else {
            Op::Leaf
        };
        Ok(self.push(Tensor::matrix(rows, h, out), op, rg))
    }

    /// Runs the reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.backward_done = true;
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.as_deref() else {
                continue;
            };
            propagate(before, node, g);
        }
        Ok(())
    }
}

fn accumulate(nodes: &mut [Node], idx: usize, f: impl FnOnce(&mut [f64], &Tensor)) {
    let node = &mut nodes[idx];
    if !node.requires_grad {
        return;
    }
    let len = node.value.len();
    let g = node.grad.get_or_insert_with(|| vec![0.0; len]);
    f(g, &node.value);
}

/// Like [`accumulate`] but also lends the value of node `other`.
fn accumulate_with(
    nodes: &mut [Node],
    idx: usize,
    other: usize,
    f: impl FnOnce(&mut [f64], &[f64], &[f64]),
) {
    if !nodes[idx].requires_grad {
        return;
    }
    if idx == other {
        let v = nodes[idx].value.data().to_vec();
        accumulate(nodes, idx, |g, own| f(g, own.data(), &v));
        return;
    }
    let (target, source) = if idx < other {
        let (lo, hi) = nodes.split_at_mut(other);
        (&mut lo[idx], &hi[0])
    } else {
        let (lo, hi) = nodes.split_at_mut(idx);
        (&mut hi[0], &lo[other])
    };
    let len = target.value.len();
    let g = target.grad.get_or_insert_with(|| vec![0.0; len]);
    f(g, target.value.data(), source.value.data());
}

/// dA += G · Bᵀ and dB += Aᵀ · G for `C = A · B`.
fn matmul_backward(before: &mut [Node], a: usize, b: usize, g: &[f64]) {
    let (m, k) = (before[a].value.shape()[0], before[a].value.shape()[1]);
    let n = before[b].value.shape()[1];
    accumulate_with(before, a, b, |ga, _, bv| {
        for (grow, garow) in g.chunks_exact(n).zip(ga.chunks_exact_mut(k)) {
            for (o, brow) in garow.iter_mut().zip(bv.chunks_exact(n)) {
                *o += dot(grow, brow);
            }
        }
    });
    accumulate_with(before, b, a, |gb, _, av| {
        let mut i = 0;
        while i + 4 <= m {
            let g4 = &g[i * n..(i + 4) * n];
            let (g0, rest) = g4.split_at(n);
            let (g1, rest) = rest.split_at(n);
            let (g2, g3) = rest.split_at(n);
            for p in 0..k {
                let a0 = av[i * k + p];
                let a1 = av[(i + 1) * k + p];
                let a2 = av[(i + 2) * k + p];
                let a3 = av[(i + 3) * k + p];
                let row = &mut gb[p * n..(p + 1) * n];
                for ((((o, x0), x1), x2), x3) in row.iter_mut().zip(g0).zip(g1).zip(g2).zip(g3) {
                    *o += a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3;
                }
            }
            i += 4;
        }
        for i in i..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let a_ip = av[i * k + p];
                for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                    *o += a_ip * gv;
                }
            }
        }
    });
}

fn propagate(before: &mut [Node], node: &Node, g: &[f64]) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => matmul_backward(before, *a, *b, g),
        Op::Linear { x, w, b } => {
            matmul_backward(before, *x, *w, g);
            accumulate(before, *b, |gb, _| {
                let n = gb.len().max(1);
                for chunk in g.chunks(n) {
                    add_into(gb, chunk);
                }
            });
        }
        Op::LstmGates(z) => accumulate(before, *z, |gz, _| {
            let h = node.value.shape()[1] / 4;
            let blocks = gz.chunks_mut(h).zip(g.chunks(h)).zip(y.chunks(h));
            for (j, ((ob, gb), yb)) in blocks.enumerate() {
                let tanh_block = j % 4 == 2;
                for ((o, gv), a) in ob.iter_mut().zip(gb).zip(yb) {
                    *o += if tanh_block { gv * (1.0 - a * a) } else { gv * a * (1.0 - a) };
                }
            }
        }),
        Op::LstmCellState { gates, c_prev } => {
            let h = node.value.shape()[1].max(1);
            accumulate_with(before, *gates, *c_prev, |ga, a, cp| {
                for (r, gr) in g.chunks(h).enumerate() {
                    let ar = &a[r * 4 * h..(r + 1) * 4 * h];
                    let row = &mut ga[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        row[j] += gr[j] * ar[2 * h + j];
                        row[h + j] += gr[j] * cp[r * h + j];
                        row[2 * h + j] += gr[j] * ar[j];
                    }
                }
            });
            accumulate_with(before, *c_prev, *gates, |gc, _, a| {
                for (r, gr) in g.chunks(h).enumerate() {
                    for j in 0..h {
                        gc[r * h + j] += gr[j] * a[r * 4 * h + h + j];
                    }
                }
            });
        }
        Op::LstmHidden { gates, c, tanh_c } => {
            let h = node.value.shape()[1];
            accumulate(before, *gates, |ga, _| {
                for (r, gr) in g.chunks(h.max(1)).enumerate() {
                    for j in 0..h {
                        ga[r * 4 * h + 3 * h + j] += gr[j] * tanh_c[r * h + j];
                    }
                }
            });
            accumulate_with(before, *c, *gates, |gc, _, a| {
                for (r, gr) in g.chunks(h.max(1)).enumerate() {
                    for j in 0..h {
                        let t = tanh_c[r * h + j];
                        gc[r * h + j] += gr[j] * a[r * 4 * h + 3 * h + j] * (1.0 - t * t);
                    }
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(before, *a, |ga, _| add_into(ga, g));
            accumulate(before, *b, |gb, _| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            accumulate(before, *a, |ga, _| add_into(ga, g));
            accumulate(before, *b, |gb, _| {
                gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
            });
        }
        Op::Mul(a, b) => {
            if before[*a].requires_grad {
                accumulate_with(before, *a, *b, |ga, _, bv| {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * bv;
                    }
                });
            }
            if before[*b].requires_grad {
                accumulate_with(before, *b, *a, |gb, _, av| {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * av;
                    }
                });
            }
        }
        Op::Scale(a, f) => accumulate(before, *a, |ga, _| {
            ga.iter_mut().zip(g).for_each(|(o, v)| *o += f * v);
        }),
        Op::AddRow(x, row) => {
            accumulate(before, *x, |gx, _| add_into(gx, g));
            accumulate(before, *row, |gr, _| {
                let c = gr.len().max(1);
                for chunk in g.chunks(c) {
                    add_into(gr, chunk);
                }
            });
        }
        Op::Concat { parts, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis] * inner;
            let mut offset = 0;
            for &p in parts {
                let chunk = before[p].value.shape()[*axis] * inner;
                accumulate(before, p, |gp, _| {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + chunk];
                        add_into(&mut gp[o * chunk..(o + 1) * chunk], src);
                    }
                });
                offset += chunk;
            }
        }
        Op::Sum { x, axis } | Op::Mean { x, axis } => {
            let is_mean = matches!(node.op, Op::Mean { .. });
            let (outer, n, inner) = split_axis(before[*x].value.shape(), *axis);
            let f = if is_mean && n > 0 { 1.0 / n as f64 } else { 1.0 };
            accumulate(before, *x, |gx, _| {
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..n {
                        let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
                    }
                }
            });
        }
        Op::SumAll(x) => accumulate(before, *x, |gx, _| {
            gx.iter_mut().for_each(|v| *v += g[0]);
        }),
        Op::Tanh(x) => accumulate(before, *x, |gx, _| {
            for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                *o += gv * (1.0 - yv * yv);
            }
        }),
        Op::Sigmoid(x) => accumulate(before, *x, |gx, _| {
            for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                *o += gv * yv * (1.0 - yv);
            }
        }),
        Op::Relu(x) => accumulate(before, *x, |gx, xv| {
            for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xv.data()) {
                if *xv > 0.0 {
                    *o += gv;
                }
            }
        }),
        Op::Slice { x, axis, start, len } => {
            let (outer, n, inner) = split_axis(before[*x].value.shape(), *axis);
            accumulate(before, *x, |gx, _| {
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    add_into(&mut gx[base..base + len * inner], src);
                }
            });
        }
        Op::Gather { x, index } => {
            let c = before[*x].value.cols();
            accumulate(before, *x, |gx, _| {
                for (r, &i) in index.iter().enumerate() {
                    add_into(&mut gx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                }
            });
        }
        Op::SegmentMean { x, segment, counts } => {
            let c = before[*x].value.cols();
            accumulate(before, *x, |gx, _| {
                for (e, &s) in segment.iter().enumerate() {
                    let f = 1.0 / counts[s] as f64;
                    let src = &g[s * c..(s + 1) * c];
                    gx[e * c..(e + 1) * c]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, v)| *d += f * v);
                }
            });
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
