//! Reverse-mode differentiation over an append-only tape.
//!
//! Every primitive pushes one node holding its forward value and the ids of
//! its inputs. Inputs always precede the node that consumes them, so walking
//! the tape backwards from the root visits nodes in reverse topological order.

use std::collections::HashMap;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    SoftmaxRows(Var),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    RowDot(Var, Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<S>,
    },
    CosineSim {
        a: Var,
        b: Var,
        na: S,
        nb: S,
    },
    CrossEntropyRows {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Recorded computation. Build it forward with the primitive methods, then
/// call [`Tape::backward`] on a scalar root.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
    per_row: Vec<S>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::Shape {
            op,
            detail: format!("expected a matrix, got shape {s:?}"),
        }),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            per_row: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Loads a parameter onto the tape once; later calls return the same node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = if p.frozen {
            self.constant(p.value.clone())
        } else {
            self.leaf(p.value.clone())
        };
        self.params.insert(id, v);
        v
    }

    /// Detaches a value: same forward value, no gradient path.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims("matmul", ta)?;
        let (k2, n) = dims("matmul", tb)?;
        if k != k2 {
            return Err(TensorError::shapes("matmul", ta.shape(), tb.shape()));
        }
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == S::zero() {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (r, c) = dims("transpose", t)?;
        let d = t.data();
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::shapes("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::shapes("sub", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = dims("add_bias", tx)?;
        if tb.numel() != n || tb.shape().len() != 1 {
            return Err(TensorError::shapes("add_bias", tx.shape(), tb.shape()));
        }
        let b = tb.data();
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (o, &bv) in data[i * n..(i + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: S) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar(x), &[x])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (m, n) = dims("softmax_rows", t)?;
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let mut out = t.data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::SoftmaxRows(x), &[x]))
    }

    /// Elementwise `max(x, 0)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu_fwd);
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Per-row layer normalization with affine gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = dims("layer_norm", tx)?;
        if tg.numel() != n || tb.numel() != n {
            return Err(TensorError::shapes("layer_norm", tx.shape(), tg.shape()));
        }
        let (g, b) = (tg.data(), tb.data());
        let nn = S::lit(n as f64);
        let mut xhat = vec![S::zero(); m * n];
        let mut inv_std = vec![S::zero(); m];
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = tx.row(i);
            let mean = row.iter().copied().sum::<S>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nn;
            let inv = S::one() / (var + S::lit(LN_EPS)).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
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

    /// Gathers rows of a `V×d` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        let (v, d) = dims("embedding", t)?;
        if ids.is_empty() {
            return Err(TensorError::Contract("embedding lookup of zero ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::Shape {
                op: "embedding",
                detail: format!("id {bad} out of range for table {:?}", t.shape()),
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows of nothing".into()))?;
        let (_, n) = dims("concat_rows", self.value(*first))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = dims("concat_rows", t)?;
            if c != n {
                return Err(TensorError::shapes(
                    "concat_rows",
                    self.value(*first).shape(),
                    t.shape(),
                ));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, n], out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols of nothing".into()))?;
        let (m, _) = dims("concat_cols", self.value(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = dims("concat_cols", t)?;
            if r != m {
                return Err(TensorError::shapes(
                    "concat_cols",
                    self.value(*first).shape(),
                    t.shape(),
                ));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (m, n) = dims("slice_cols", t)?;
        if width == 0 || start + width > n {
            return Err(TensorError::Shape {
                op: "slice_cols",
                detail: format!("columns {start}..{} of {:?}", start + width, t.shape()),
            });
        }
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..start + width]);
        }
        let value = Tensor::new(vec![m, width], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (m, n) = dims("select_rows", t)?;
        if rows.is_empty() {
            return Err(TensorError::Contract("select_rows of zero rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(TensorError::Shape {
                op: "select_rows",
                detail: format!("row {bad} out of range for {:?}", t.shape()),
            });
        }
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(vec![rows.len(), n], out)?;
        Ok(self.push(value, Op::SelectRows { x, rows: rows.to_vec() }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<S>() / S::lit(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Dot product of matching rows: `m×n, m×n -> m×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, _) = dims("row_dot", ta)?;
        if ta.shape() != tb.shape() {
            return Err(TensorError::shapes("row_dot", ta.shape(), tb.shape()));
        }
        let out = (0..m)
            .map(|i| ta.row(i).iter().zip(tb.row(i)).map(|(&x, &y)| x * y).sum())
            .collect();
        let value = Tensor::new(vec![m, 1], out)?;
        Ok(self.push(value, Op::RowDot(a, b), &[a, b]))
    }

    /// Scales each row (or a 1-d vector) to unit Euclidean length.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (m, n) = t.dims2().ok_or_else(|| TensorError::Shape {
            op: "l2_normalize",
            detail: format!("expected vector or matrix, got {:?}", t.shape()),
        })?;
        let mut norms = Vec::with_capacity(m);
        let mut out = t.data().to_vec();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let nrm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
            if !(nrm > S::zero()) || !nrm.is_finite() {
                return Err(TensorError::Degenerate { op: "l2_normalize" });
            }
            row.iter_mut().for_each(|v| *v /= nrm);
            norms.push(nrm);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::L2NormalizeRows { x, norms }, &[x]))
    }

    /// Cosine similarity of two equal-length vectors, as a scalar node.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.numel() != tb.numel() || ta.shape() != tb.shape() {
            return Err(TensorError::shapes("cosine_sim", ta.shape(), tb.shape()));
        }
        let (na, nb) = (ta.norm_l2(), tb.norm_l2());
        if !(na > S::zero() && nb > S::zero()) {
            return Err(TensorError::Degenerate { op: "cosine_sim" });
        }
        let dot: S = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).sum();
        let c = dot / (na * nb);
        Ok(self.push(Tensor::scalar(c), Op::CosineSim { a, b, na, nb }, &[a, b]))
    }

    /// Mean over rows of `-log softmax(logits_i)[target_i]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(logits);
        let (m, n) = dims("cross_entropy_rows", t)?;
        if targets.len() != m || targets.iter().any(|&j| j >= n) {
            return Err(TensorError::Contract(format!(
                "cross_entropy_rows: {} targets for {m}×{n} logits",
                targets.len()
            )));
        }
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite {
                op: "cross_entropy_rows",
            });
        }
        let mut probs = t.data().to_vec();
        let mut per_row = Vec::with_capacity(m);
        for i in 0..m {
            let row = t.row(i);
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<S>().ln();
            per_row.push(lse - row[targets[i]]);
            softmax_in_place(&mut probs[i * n..(i + 1) * n]);
        }
        let loss = per_row.iter().copied().sum::<S>() / S::lit(m as f64);
        self.per_row = per_row;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Per-row losses of the most recent [`Tape::cross_entropy_rows`] call.
    pub fn last_row_losses(&self) -> &[S] {
        &self.per_row
    }

    /// `x · w + b` for an `m×k` input, `k×n` weight and length-`n` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Propagates `d root / d node` to every node that requires gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>, TensorError> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![S::one()]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad).map(|g| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("gradient shape mirrors value")
                })
            })
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![S::zero(); nodes[v.0].value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                let (da, db) = (ta.data(), tb.data());
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &db[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<S>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = da[i * k + p];
                            if aip == S::zero() {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[x.0].value.rows(), nodes[x.0].value.cols());
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &v)| *o -= v));
            }
            Op::AddBias(x, b) => {
                let n = nodes[b.0].value.numel();
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*b, &mut |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += *c * v));
            }
            Op::AddScalar(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                acc(*x, &mut |gx| {
                    for ((gxr, yr), gr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gxr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xin = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((o, &xv), &gv) in gx.iter_mut().zip(xin).zip(g) {
                        if xv > S::zero() {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xin = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((o, &xv), &gv) in gx.iter_mut().zip(xin).zip(g) {
                        *o += gv * gelu_grad(xv);
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
                let n = nodes[gamma.0].value.numel();
                let gam = nodes[gamma.0].value.data();
                acc(*gamma, &mut |gg| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in g.chunks(n) {
                        add_into(gb, gr);
                    }
                });
                let nn = S::lit(n as f64);
                acc(*x, &mut |gx| {
                    for (i, ((gxr, gr), hr)) in gx.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        let dh: Vec<S> = gr.iter().zip(gam).map(|(&a, &b)| a * b).collect();
                        let sum_dh: S = dh.iter().copied().sum();
                        let sum_dh_h: S = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                        let k = inv_std[i] / nn;
                        for j in 0..n {
                            gxr[j] += k * (nn * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].value.cols();
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.numel();
                    acc(p, &mut |gp| add_into(gp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.value.cols();
                let mut col = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    acc(p, &mut |gp| {
                        for (i, gpr) in gp.chunks_mut(w).enumerate() {
                            add_into(gpr, &g[i * n + col..i * n + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::SliceCols { x, start } => {
                let n = nodes[x.0].value.cols();
                let w = node.value.cols();
                acc(*x, &mut |gx| {
                    for (i, gr) in g.chunks(w).enumerate() {
                        add_into(&mut gx[i * n + start..i * n + start + w], gr);
                    }
                });
            }
            Op::SelectRows { x, rows } => {
                let n = nodes[x.0].value.cols();
                acc(*x, &mut |gx| {
                    for (gr, &r) in g.chunks(n).zip(rows) {
                        add_into(&mut gx[r * n..(r + 1) * n], gr);
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g[0];
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += gv));
            }
            Op::Mean(x) => {
                let gv = g[0] / S::lit(nodes[x.0].value.numel() as f64);
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += gv));
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let n = ta.cols();
                acc(*a, &mut |ga| {
                    for (i, gr) in ga.chunks_mut(n).enumerate() {
                        for (o, &bv) in gr.iter_mut().zip(tb.row(i)) {
                            *o += g[i] * bv;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for (i, gr) in gb.chunks_mut(n).enumerate() {
                        for (o, &av) in gr.iter_mut().zip(ta.row(i)) {
                            *o += g[i] * av;
                        }
                    }
                });
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = node.value.data();
                let n = node.value.cols();
                acc(*x, &mut |gx| {
                    for (i, ((gxr, yr), gr)) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)).enumerate() {
                        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gxr[j] += (gr[j] - yr[j] * dot) / norms[i];
                        }
                    }
                });
            }
            Op::CosineSim { a, b, na, nb } => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let c = node.value.item();
                let gv = g[0];
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += gv * (tb[j] / (*na * *nb) - c * ta[j] / (*na * *na));
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..gb.len() {
                        gb[j] += gv * (ta[j] / (*na * *nb) - c * tb[j] / (*nb * *nb));
                    }
                });
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let (m, n) = (nodes[logits.0].value.rows(), nodes[logits.0].value.cols());
                let k = g[0] / S::lit(m as f64);
                acc(*logits, &mut |gl| {
                    for i in 0..m {
                        for j in 0..n {
                            let onehot = if j == targets[i] { S::one() } else { S::zero() };
                            gl[i * n + j] += k * (probs[i * n + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    dst.iter_mut().zip(src).for_each(|(o, &v)| *o += v);
}

fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn gelu_consts<S: Scalar>() -> (S, S) {
    (S::lit((2.0 / std::f64::consts::PI).sqrt()), S::lit(0.044715))
}

fn gelu_fwd<S: Scalar>(x: S) -> S {
    let (k, a) = gelu_consts::<S>();
    let half = S::lit(0.5);
    half * x * (S::one() + (k * (x + a * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let (k, a) = gelu_consts::<S>();
    let half = S::lit(0.5);
    let t = (k * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * k * (S::one() + S::lit(3.0) * a * x * x)
}

/// Result of [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: HashMap<ParamId, Var>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the root with respect to `v`, if `v` participates.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter loaded through [`Tape::param`].
    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params.get(&id).and_then(|&v| self.get(v))
    }

    /// Dense per-parameter gradients aligned with `store`; untouched or frozen
    /// parameters get zeros.
    pub fn for_store(&self, store: &ParamStore<S>) -> Vec<Tensor<S>> {
        store
            .iter()
            .map(|(id, p)| {
                self.param(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
            })
            .collect()
    }
}
