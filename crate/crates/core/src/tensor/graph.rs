use std::collections::{BTreeMap, HashMap};

use super::{gemm_nn, gemm_nt, gemm_tn, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    GatherCols { input: Var, idx: Vec<usize> },
    ScatterAddCols { input: Var, idx: Vec<usize> },
    PadCols(Var),
    SelectRows { input: Var, rows: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single forward pass worth of recorded operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    backward_done: bool,
}

/// Gradients produced by one backward sweep: one entry per parameter that
/// entered the graph, plus every leaf created with [`Graph::leaf`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
    by_var: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn var(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(&v)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.by_name
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.by_name
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input whose gradient is reported by [`Gradients::var`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Brings a named parameter into the graph. Repeated calls return the
    /// same node so gradients for shared weights accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::invalid(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::MatMul(a, b), ng))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op_name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a vector of length `cols` to every row of a `[rows, cols]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims2("add_row", x)?;
        let tr = self.value(row);
        if tr.numel() != c || tr.rank() > 2 || (tr.rank() == 2 && tr.shape()[0] != 1) {
            return Err(shape_err("add_row", self.value(x), tr));
        }
        let rv = tr.data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for (d, b) in data[i * c..(i + 1) * c].iter_mut().zip(&rv) {
                *d += b;
            }
        }
        let t = Tensor::new(vec![r, c], data)?;
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(t, Op::AddRow(x, row), ng))
    }

    /// Scales row `i` of a `[rows, cols]` matrix by `col[i]` where `col` is `[rows, 1]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (r, c) = self.dims2("mul_col", x)?;
        let tc = self.value(col);
        if tc.shape() != [r, 1] {
            return Err(shape_err("mul_col", self.value(x), tc));
        }
        let cv = tc.data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (i, s) in cv.iter().enumerate() {
            for d in &mut data[i * c..(i + 1) * c] {
                *d *= s;
            }
        }
        let t = Tensor::new(vec![r, c], data)?;
        let ng = self.ng(x) || self.ng(col);
        Ok(self.push(t, Op::MulCol(x, col), ng))
    }

    /// `scale * x + shift`, elementwise. Scalar-tensor arithmetic goes through here.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Affine(x, scale), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", self.value(*first), self.value(v)));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(shape, data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Slice { input: x, axis, start }, ng))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.ng(x);
        Ok(self.push(t, op, ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_masked(x, None)
    }

    /// Row-wise softmax over the last axis. Positions where `mask` is zero
    /// get probability exactly zero; a fully masked row is an error.
    pub fn softmax_masked(&mut self, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        let tx = self.value(x);
        let cols = *tx
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("softmax", "scalar input"))?;
        if let Some(m) = mask {
            if m.numel() != tx.numel() {
                return Err(shape_err("softmax", tx, m));
            }
        }
        let rows = tx.numel() / cols;
        let mut data = vec![0.0; tx.numel()];
        for r in 0..rows {
            let xs = &tx.data()[r * cols..(r + 1) * cols];
            let keep = |j: usize| mask.is_none_or(|m| m.data()[r * cols + j] != 0.0);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| xs[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::AllMasked { row: r });
            }
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut z = 0.0;
            for j in 0..cols {
                if keep(j) {
                    out[j] = (xs[j] - max).exp();
                    z += out[j];
                }
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Softmax(x), ng))
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2("embedding", table)?;
        if ids.is_empty() {
            return Err(Error::invalid("embedding", "no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::invalid("embedding", format!("id {bad} out of range for {v} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        let ng = self.ng(table);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        Ok(self.push(t, Op::Sum(x), ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::scalar(tx.sum() / tx.numel() as f64);
        let ng = self.ng(x);
        Ok(self.push(t, Op::Mean(x), ng))
    }

    /// Row sums: `[rows, cols] -> [rows, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("sum_cols", x)?;
        let src = self.value(x).data();
        let data = (0..r).map(|i| src[i * c..(i + 1) * c].iter().sum()).collect();
        let t = Tensor::new(vec![r, 1], data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::SumCols(x), ng))
    }

    /// Picks `x[i, idx[i]]` for every row: `[rows, cols] -> [rows, 1]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("gather_cols", x)?;
        if idx.len() != r {
            return Err(Error::invalid("gather_cols", format!("{} indices for {r} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::invalid("gather_cols", format!("column {bad} out of range for {c}")));
        }
        let src = self.value(x).data();
        let data = idx.iter().enumerate().map(|(i, &j)| src[i * c + j]).collect();
        let t = Tensor::new(vec![r, 1], data)?;
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::GatherCols {
                input: x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// `out[i, idx[i][j]] += x[i, j]` into a `[rows, width]` result; `idx` is
    /// row-major with the same layout as `x`. Duplicate targets accumulate.
    pub fn scatter_add_cols(&mut self, x: Var, idx: &[usize], width: usize) -> Result<Var> {
        let (r, c) = self.dims2("scatter_add_cols", x)?;
        if idx.len() != r * c {
            return Err(Error::invalid(
                "scatter_add_cols",
                format!("{} indices for a {r}x{c} input", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= width) {
            return Err(Error::invalid(
                "scatter_add_cols",
                format!("target column {bad} out of range for width {width}"),
            ));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; r * width];
        for i in 0..r {
            for j in 0..c {
                data[i * width + idx[i * c + j]] += src[i * c + j];
            }
        }
        let t = Tensor::new(vec![r, width], data)?;
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::ScatterAddCols {
                input: x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Right-pads every row with zeros up to `width` columns.
    pub fn pad_cols(&mut self, x: Var, width: usize) -> Result<Var> {
        let (r, c) = self.dims2("pad_cols", x)?;
        if width < c {
            return Err(Error::invalid("pad_cols", format!("width {width} below {c} columns")));
        }
        if width == c {
            return Ok(x);
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; r * width];
        for i in 0..r {
            data[i * width..i * width + c].copy_from_slice(&src[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(vec![r, width], data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::PadCols(x), ng))
    }

    /// Builds a matrix from the listed rows of `x` (rows may repeat).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("select_rows", x)?;
        if rows.is_empty() {
            return Err(Error::invalid("select_rows", "no rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::invalid("select_rows", format!("row {bad} out of range for {r}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(vec![rows.len(), c], data)?;
        let ng = self.ng(x);
        Ok(self.push(
            t,
            Op::SelectRows {
                input: x,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar loss. A graph supports exactly one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.backward_done = true;

        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let mut out = Gradients::default();
        let param_ids: std::collections::HashSet<usize> = self.params.values().map(|v| v.0).collect();
        for (name, &v) in &self.params {
            let g = match grads.get_mut(v.0).and_then(Option::take) {
                Some(g) => Tensor::new(self.value(v).shape().to_vec(), g)?,
                None => Tensor::zeros(self.value(v).shape()),
            };
            out.by_name.insert(name.clone(), g);
        }
        for (i, node) in self.nodes[..n].iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad || param_ids.contains(&i) {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => Tensor::new(node.value.shape().to_vec(), g)?,
                None => Tensor::zeros(node.value.shape()),
            };
            out.by_var.insert(Var(i), g);
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = &nodes[a.0].value;
                let tb = &nodes[b.0].value;
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                acc(*a, &mut |ga| gemm_nt(g, tb.data(), ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn(ta.data(), g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |ga| {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(tb) {
                        *d += s * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(ta) {
                        *d += s * x;
                    }
                });
            }
            Op::AddRow(x, row) => {
                let c = nodes[row.0].value.numel();
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*row, &mut |gr| {
                    for chunk in g.chunks(c) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::MulCol(x, col) => {
                let tx = nodes[x.0].value.data();
                let tc = nodes[col.0].value.data();
                let c = tx.len() / tc.len();
                acc(*x, &mut |gx| {
                    for (r, s) in tc.iter().enumerate() {
                        for j in 0..c {
                            gx[r * c + j] += g[r * c + j] * s;
                        }
                    }
                });
                acc(*col, &mut |gc| {
                    for (r, d) in gc.iter_mut().enumerate() {
                        let row = r * c..(r + 1) * c;
                        *d += g[row.clone()].iter().zip(&tx[row]).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::Affine(x, s) => acc(*x, &mut |gx| {
                for (d, v) in gx.iter_mut().zip(g) {
                    *d += s * v;
                }
            }),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = nodes[v.0].value.shape()[*axis] * inner;
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            add_into(&mut gv[o * chunk..(o + 1) * chunk], src);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = nodes[input.0].value.shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let len = node.value.shape()[*axis];
                let (in_dim, start) = (in_shape[*axis], *start);
                acc(*input, &mut |gx| {
                    for o in 0..outer {
                        let base = (o * in_dim + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        add_into(&mut gx[base..base + len * inner], src);
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for ((d, s), y) in gx.iter_mut().zip(g).zip(out) {
                    *d += s * y * (1.0 - y);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for ((d, s), y) in gx.iter_mut().zip(g).zip(out) {
                    *d += s * (1.0 - y * y);
                }
            }),
            Op::Exp(x) => acc(*x, &mut |gx| {
                for ((d, s), y) in gx.iter_mut().zip(g).zip(out) {
                    *d += s * y;
                }
            }),
            Op::Log(x) => {
                let tx = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((d, s), v) in gx.iter_mut().zip(g).zip(tx) {
                        *d += s / v;
                    }
                })
            }
            Op::Softmax(x) => {
                let cols = *node.value.shape().last().unwrap();
                acc(*x, &mut |gx| {
                    for ((gr, yr), dr) in g.chunks(cols).zip(out.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, s), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += y * (s - dot);
                        }
                    }
                })
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].value.shape()[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mean(x) => acc(*x, &mut |gx| {
                let s = g[0] / gx.len() as f64;
                for d in gx.iter_mut() {
                    *d += s;
                }
            }),
            Op::SumCols(x) => acc(*x, &mut |gx| {
                let c = gx.len() / g.len();
                for (r, s) in g.iter().enumerate() {
                    for d in &mut gx[r * c..(r + 1) * c] {
                        *d += s;
                    }
                }
            }),
            Op::GatherCols { input, idx } => acc(*input, &mut |gx| {
                let c = gx.len() / idx.len();
                for (r, &j) in idx.iter().enumerate() {
                    gx[r * c + j] += g[r];
                }
            }),
            Op::ScatterAddCols { input, idx } => {
                let width = *node.value.shape().last().unwrap();
                acc(*input, &mut |gx| {
                    let c = nodes[input.0].value.shape()[1];
                    for (p, d) in gx.iter_mut().enumerate() {
                        let r = p / c;
                        *d += g[r * width + idx[p]];
                    }
                })
            }
            Op::PadCols(x) => {
                let width = node.value.shape()[1];
                acc(*x, &mut |gx| {
                    let c = nodes[x.0].value.shape()[1];
                    for (r, dr) in gx.chunks_mut(c).enumerate() {
                        add_into(dr, &g[r * width..r * width + c]);
                    }
                })
            }
            Op::SelectRows { input, rows } => {
                let c = node.value.shape()[1];
                acc(*input, &mut |gx| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut gx[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3]));
        let y = g.softmax(x).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut rng = seeded_rng(1);
        let mut g = Graph::new();
        let i3 = g.constant(Tensor::identity(3));
        let xv = Tensor::uniform(&[3, 1], -2.0, 2.0, &mut rng);
        let x = g.constant(xv.clone());
        let y = g.matmul(i3, x).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, c), Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.var(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_x() {
        let xv = Tensor::from_vec(vec![1.5, -0.25, 4.0]);
        let mut g = Graph::new();
        let x = g.leaf(xv.clone());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        let want: Vec<f64> = xv.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.var(x).unwrap().data(), want.as_slice());
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 5.0]).unwrap());
        let mask = Tensor::matrix(2, 3, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = g.softmax_masked(x, Some(&mask)).unwrap();
        let v = g.value(y);
        assert_eq!(v.get2(0, 2), 0.0);
        assert!((v.get2(1, 0) - 0.5).abs() < 1e-15);
        let all_masked = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            g.softmax_masked(x, Some(&all_masked)),
            Err(Error::AllMasked { row: 0 })
        ));
    }

    #[test]
    fn shared_param_enters_graph_once() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let a = g.param(&store, "w").unwrap();
        let b = g.param(&store, "w").unwrap();
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.param("w").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn scatter_add_sums_duplicate_targets() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(1, 3, vec![0.2, 0.3, 0.5]).unwrap());
        let s = g.scatter_add_cols(a, &[4, 1, 4], 5).unwrap();
        assert_eq!(g.value(s).data(), &[0.0, 0.3, 0.0, 0.0, 0.7]);
    }
}
