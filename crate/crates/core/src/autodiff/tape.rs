use std::collections::HashMap;

use super::crf_kernel::{self, CrfSequenceGrad};
use super::gemm::gemm;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    ScaleBy { x: Var, s: Var, index: usize },
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Mean { x: Var, axis: usize },
    Sum(Var),
    Sigmoid(Var),
    Tanh(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Gather { table: Var, indices: Vec<usize> },
    Pick { x: Var, indices: Vec<usize> },
    Crf(Box<CrfRecord>),
}

#[derive(Debug)]
struct CrfRecord {
    emissions: Vec<Var>,
    transitions: Var,
    start: Var,
    stop: Var,
    lengths: Vec<usize>,
    grads: Vec<CrfSequenceGrad>,
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::AddRow(a, b) | Op::MulCol(a, b) => vec![*a, *b],
            Op::ScaleBy { x, s, .. } => vec![*x, *s],
            Op::Scale(x, _)
            | Op::SliceCols { x, .. }
            | Op::SliceRows { x, .. }
            | Op::Mean { x, .. }
            | Op::Sum(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::LogSoftmax(x)
            | Op::LogSumExp(x)
            | Op::Pick { x, .. } => vec![*x],
            Op::Gather { table, .. } => vec![*table],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::Crf(rec) => {
                let mut v = rec.emissions.clone();
                v.extend([rec.transitions, rec.start, rec.stop]);
                v
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    /// Accumulated gradient; only leaves that require grad carry one.
    grad: Option<Vec<f64>>,
    param: Option<ParamId>,
}

/// Reverse-mode tape. Nodes are appended in creation order, so every parent
/// precedes its children and reverse iteration is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    inference: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape on which parameters enter as constants; nothing is differentiable.
    pub fn inference() -> Self {
        Tape {
            inference: true,
            ..Tape::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        let grad = requires_grad.then(|| vec![0.0; value.len()]);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
            grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false, None)
    }

    /// A free leaf that requires grad.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true, None)
    }

    /// Binds a stored parameter as a leaf. Repeated binds of the same id on
    /// one tape return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let requires_grad = !self.inference;
        let v = self.leaf(store.value(id).clone(), requires_grad, Some(id));
        self.bound.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad.is_some()
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Gradients of bound parameters, drained back to zero.
    pub(crate) fn take_param_grads(&mut self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_mut()) {
                out.push((id, std::mem::replace(g, vec![0.0; g.len()])));
            }
        }
        out
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// `x + row` with `row` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(row).len() != n {
            return Err(Error::dim(
                "add_row",
                format!("row of {} values for {m}x{n}", self.value(row).len()),
            ));
        }
        let b = self.data(row);
        let mut data = self.data(x).to_vec();
        for r in data.chunks_mut(n) {
            r.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv);
        }
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, row)))
    }

    /// `x[i, j] * col[i]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(col).len() != m {
            return Err(Error::dim(
                "mul_col",
                format!("column of {} values for {m}x{n}", self.value(col).len()),
            ));
        }
        let c = self.data(col);
        let mut data = self.data(x).to_vec();
        for (r, &cv) in data.chunks_mut(n).zip(c) {
            r.iter_mut().for_each(|v| *v *= cv);
        }
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::MulCol(x, col)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.map(x, |v| v * s);
        self.push(t, Op::Scale(x, s))
    }

    /// `s[index] * x` where `s` is a differentiable tensor.
    pub fn scale_by(&mut self, x: Var, s: Var, index: usize) -> Result<Var> {
        let n = self.value(s).len();
        if index >= n {
            return Err(Error::bounds("scale_by", index, n));
        }
        let sv = self.data(s)[index];
        let t = self.map(x, |v| v * sv);
        Ok(self.push(t, Op::ScaleBy { x, s, index }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::dim("matmul", format!("{m}x{k} @ {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Concatenation along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no operands"))?;
        let m = self.dims(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(Error::dim("concat_cols", format!("row counts {m} and {r}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.data(p);
            for i in 0..m {
                out[i * n + offset..i * n + offset + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    /// Concatenation along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows", "no operands"))?;
        let n = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(Error::dim("concat_rows", format!("column counts {n} and {c}")));
            }
            rows += r;
            out.extend_from_slice(self.data(p));
        }
        let t = Tensor::matrix(rows, n, out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start >= end || end > n {
            return Err(Error::dim("slice_cols", format!("{start}..{end} of {n} columns")));
        }
        let w = end - start;
        let src = self.data(x);
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let t = Tensor::matrix(m, w, out)?;
        Ok(self.push(t, Op::SliceCols { x, start }))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start >= end || end > m {
            return Err(Error::dim("slice_rows", format!("{start}..{end} of {m} rows")));
        }
        let out = self.data(x)[start * n..end * n].to_vec();
        let t = Tensor::matrix(end - start, n, out)?;
        Ok(self.push(t, Op::SliceRows { x, start }))
    }

    /// Mean over `axis` (0 = over rows, 1 = over columns).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        let src = self.data(x);
        let out = match axis {
            0 => {
                let mut acc = vec![0.0; n];
                for r in src.chunks(n) {
                    acc.iter_mut().zip(r).for_each(|(a, &v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a /= m as f64);
                acc
            }
            1 => src
                .chunks(n)
                .map(|r| r.iter().sum::<f64>() / n as f64)
                .collect(),
            _ => return Err(Error::dim("mean", format!("axis {axis} on rank-2 view"))),
        };
        let t = Tensor::vector(out)?;
        Ok(self.push(t, Op::Mean { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (_, n) = self.dims(x);
        let mut out = self.data(x).to_vec();
        for r in out.chunks_mut(n) {
            let lse = logsumexp(r);
            r.iter_mut().for_each(|v| *v -= lse);
        }
        let t = Tensor::new(self.shape(x).to_vec(), out).expect("shape preserved");
        self.push(t, Op::LogSoftmax(x))
    }

    /// Row-wise log-sum-exp; one value per row.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let (_, n) = self.dims(x);
        let out: Vec<f64> = self.data(x).chunks(n).map(logsumexp).collect();
        let t = Tensor::vector(out).expect("at least one row");
        self.push(t, Op::LogSumExp(x))
    }

    /// Rows of `table` selected by `indices`, in order.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if indices.is_empty() {
            return Err(Error::Contract("embedding gather with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::bounds("embedding_gather", bad, r));
        }
        let src = self.data(table);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let t = Tensor::matrix(indices.len(), c, out)?;
        Ok(self.push(
            t,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// `x[i, indices[i]]` for every row `i`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if indices.len() != m {
            return Err(Error::dim("pick", format!("{} indices for {m} rows", indices.len())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::bounds("pick", bad, n));
        }
        let src = self.data(x);
        let out = indices
            .iter()
            .enumerate()
            .map(|(i, &j)| src[i * n + j])
            .collect();
        let t = Tensor::vector(out)?;
        Ok(self.push(
            t,
            Op::Pick {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Per-sequence linear-chain CRF log-likelihood `log p(tags | emissions)`.
    ///
    /// `emissions[t]` is `B x K` (row `b` belongs to sequence `b`); sequence
    /// `b` occupies the first `tags[b].len()` steps. Returns a length-`B`
    /// vector.
    pub fn crf_log_likelihood(
        &mut self,
        emissions: &[Var],
        transitions: Var,
        start: Var,
        stop: Var,
        tags: &[&[usize]],
    ) -> Result<Var> {
        let batch = tags.len();
        if batch == 0 {
            return Err(Error::Contract("crf over an empty batch".into()));
        }
        let (kt, k) = self.dims(transitions);
        if kt != k {
            return Err(Error::dim("crf", format!("transitions {kt}x{k} not square")));
        }
        if self.value(start).len() != k || self.value(stop).len() != k {
            return Err(Error::dim("crf", "start/stop length differs from label count"));
        }
        for &e in emissions {
            if self.dims(e) != (batch, k) {
                return Err(Error::dim(
                    "crf",
                    format!("emission step {:?}, expected {batch}x{k}", self.dims(e)),
                ));
            }
        }
        for seq in tags {
            if seq.is_empty() {
                return Err(Error::Contract("crf over an empty sequence".into()));
            }
            if seq.len() > emissions.len() {
                return Err(Error::dim(
                    "crf",
                    format!("{} tags for {} emission steps", seq.len(), emissions.len()),
                ));
            }
            if let Some(&bad) = seq.iter().find(|&&y| y >= k) {
                return Err(Error::bounds("crf label", bad, k));
            }
        }
        let trans = self.data(transitions);
        let st = self.data(start);
        let sp = self.data(stop);
        let mut values = Vec::with_capacity(batch);
        let mut grads = Vec::with_capacity(batch);
        for (b, seq) in tags.iter().enumerate() {
            let len = seq.len();
            let mut emit = Vec::with_capacity(len * k);
            for &e in &emissions[..len] {
                emit.extend_from_slice(&self.data(e)[b * k..(b + 1) * k]);
            }
            let (ll, g) = crf_kernel::log_likelihood_with_grad(&emit, len, k, trans, st, sp, seq);
            values.push(ll);
            grads.push(g);
        }
        let t = Tensor::vector(values)?;
        Ok(self.push(
            t,
            Op::Crf(Box::new(CrfRecord {
                emissions: emissions.to_vec(),
                transitions,
                start,
                stop,
                lengths: tags.iter().map(|s| s.len()).collect(),
                grads,
            })),
        ))
    }

    /// Accumulates `d(root)/d(leaf)` into every leaf that requires grad.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_len = self.value(root).len();
        if root_len != 1 {
            return Err(Error::Contract(format!(
                "backward from a non-scalar root of {root_len} values"
            )));
        }
        if !self.nodes[root.0].needs_grad {
            return Ok(());
        }
        let nodes = &self.nodes;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        let mut leaf_updates = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = node.value.data();
            match &node.op {
                Op::Leaf => leaf_updates.push((i, g)),
                Op::Add(a, b) => {
                    if let Some(s) = slot(&mut adj, nodes, *a) {
                        axpy(s, &g, 1.0);
                    }
                    if let Some(s) = slot(&mut adj, nodes, *b) {
                        axpy(s, &g, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(s) = slot(&mut adj, nodes, *a) {
                        axpy(s, &g, 1.0);
                    }
                    if let Some(s) = slot(&mut adj, nodes, *b) {
                        axpy(s, &g, -1.0);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(s) = slot(&mut adj, nodes, *a) {
                        for ((s, &gi), &bi) in s.iter_mut().zip(&g).zip(bv) {
                            *s += gi * bi;
                        }
                    }
                    if let Some(s) = slot(&mut adj, nodes, *b) {
                        for ((s, &gi), &ai) in s.iter_mut().zip(&g).zip(av) {
                            *s += gi * ai;
                        }
                    }
                }
                Op::AddRow(x, row) => {
                    let n = nodes[row.0].value.len();
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        axpy(s, &g, 1.0);
                    }
                    if let Some(s) = slot(&mut adj, nodes, *row) {
                        for r in g.chunks(n) {
                            axpy(s, r, 1.0);
                        }
                    }
                }
                Op::MulCol(x, col) => {
                    let (_, n) = nodes[x.0].value.dims2();
                    let xv = nodes[x.0].value.data();
                    let cv = nodes[col.0].value.data();
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        for ((sr, gr), &c) in s.chunks_mut(n).zip(g.chunks(n)).zip(cv) {
                            axpy(sr, gr, c);
                        }
                    }
                    if let Some(s) = slot(&mut adj, nodes, *col) {
                        for ((sc, gr), xr) in s.iter_mut().zip(g.chunks(n)).zip(xv.chunks(n)) {
                            *sc += dot(gr, xr);
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        axpy(s, &g, *c);
                    }
                }
                Op::ScaleBy { x, s: sv, index } => {
                    let scale = nodes[sv.0].value.data()[*index];
                    let xv = nodes[x.0].value.data();
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        axpy(s, &g, scale);
                    }
                    if let Some(s) = slot(&mut adj, nodes, *sv) {
                        s[*index] += dot(&g, xv);
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = nodes[a.0].value.dims2();
                    let (_, n) = nodes[b.0].value.dims2();
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(s) = slot(&mut adj, nodes, *a) {
                        gemm(m, n, k, &g, false, bv, true, 1.0, s);
                    }
                    if let Some(s) = slot(&mut adj, nodes, *b) {
                        gemm(k, m, n, av, true, &g, false, 1.0, s);
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = node.value.dims2();
                    let mut offset = 0;
                    for p in parts {
                        let w = nodes[p.0].value.dims2().1;
                        if let Some(s) = slot(&mut adj, nodes, *p) {
                            for r in 0..m {
                                axpy(
                                    &mut s[r * w..(r + 1) * w],
                                    &g[r * n + offset..r * n + offset + w],
                                    1.0,
                                );
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(s) = slot(&mut adj, nodes, *p) {
                            axpy(s, &g[offset..offset + len], 1.0);
                        }
                        offset += len;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (m, w) = node.value.dims2();
                    let n = nodes[x.0].value.dims2().1;
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        for r in 0..m {
                            axpy(
                                &mut s[r * n + start..r * n + start + w],
                                &g[r * w..(r + 1) * w],
                                1.0,
                            );
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let n = nodes[x.0].value.dims2().1;
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        axpy(&mut s[start * n..start * n + g.len()], &g, 1.0);
                    }
                }
                Op::Mean { x, axis } => {
                    let (m, n) = nodes[x.0].value.dims2();
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        for (r, sr) in s.chunks_mut(n).enumerate() {
                            for (c, v) in sr.iter_mut().enumerate() {
                                *v += if *axis == 0 {
                                    g[c] / m as f64
                                } else {
                                    g[r] / n as f64
                                };
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        s.iter_mut().for_each(|v| *v += g[0]);
                    }
                }
                Op::Sigmoid(x) => {
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        for ((s, &gi), &yi) in s.iter_mut().zip(&g).zip(y) {
                            *s += gi * yi * (1.0 - yi);
                        }
                    }
                }
                Op::Tanh(x) => {
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        for ((s, &gi), &yi) in s.iter_mut().zip(&g).zip(y) {
                            *s += gi * (1.0 - yi * yi);
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    let n = node.value.dims2().1;
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        for ((sr, gr), yr) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                            let total: f64 = gr.iter().sum();
                            for ((s, &gi), &yi) in sr.iter_mut().zip(gr).zip(yr) {
                                *s += gi - yi.exp() * total;
                            }
                        }
                    }
                }
                Op::LogSumExp(x) => {
                    let n = nodes[x.0].value.dims2().1;
                    let xv = nodes[x.0].value.data();
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        for (r, (sr, xr)) in s.chunks_mut(n).zip(xv.chunks(n)).enumerate() {
                            for (s, &xi) in sr.iter_mut().zip(xr) {
                                *s += g[r] * (xi - y[r]).exp();
                            }
                        }
                    }
                }
                Op::Gather { table, indices } => {
                    let c = nodes[table.0].value.dims2().1;
                    if let Some(s) = slot(&mut adj, nodes, *table) {
                        for (r, &i) in indices.iter().enumerate() {
                            axpy(&mut s[i * c..(i + 1) * c], &g[r * c..(r + 1) * c], 1.0);
                        }
                    }
                }
                Op::Pick { x, indices } => {
                    let n = nodes[x.0].value.dims2().1;
                    if let Some(s) = slot(&mut adj, nodes, *x) {
                        for (r, &j) in indices.iter().enumerate() {
                            s[r * n + j] += g[r];
                        }
                    }
                }
                Op::Crf(rec) => {
                    let k = nodes[rec.start.0].value.len();
                    for (b, (sg, &len)) in rec.grads.iter().zip(&rec.lengths).enumerate() {
                        let w = g[b];
                        if w == 0.0 {
                            continue;
                        }
                        for (t, &e) in rec.emissions[..len].iter().enumerate() {
                            if let Some(s) = slot(&mut adj, nodes, e) {
                                axpy(
                                    &mut s[b * k..(b + 1) * k],
                                    &sg.emissions[t * k..(t + 1) * k],
                                    w,
                                );
                            }
                        }
                        if let Some(s) = slot(&mut adj, nodes, rec.transitions) {
                            axpy(s, &sg.transitions, w);
                        }
                        if let Some(s) = slot(&mut adj, nodes, rec.start) {
                            axpy(s, &sg.start, w);
                        }
                        if let Some(s) = slot(&mut adj, nodes, rec.stop) {
                            axpy(s, &sg.stop, w);
                        }
                    }
                }
            }
        }

        for (i, g) in leaf_updates {
            if let Some(acc) = self.nodes[i].grad.as_mut() {
                axpy(acc, &g, 1.0);
            }
        }
        Ok(())
    }
}

fn slot<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(adj[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted log-sum-exp of a slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
