use std::collections::HashMap;
use std::sync::Arc;

use super::{mismatch, sigmoid, softplus, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Broadcast(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    MeanRows(Var),
    SumRows(Var),
    SumCols(Var),
    EdgeMatVec {
        mats: Var,
        kinds: Arc<[usize]>,
        x: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Arc<Tensor>,
        weights: Arc<[f64]>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for one backward pass.
///
/// Shape rules (all tensors `[rows, cols]`):
///
/// | op                 | inputs                          | output          |
/// |--------------------|---------------------------------|-----------------|
/// | `matmul`           | `[m,k]`, `[k,n]`                | `[m,n]`         |
/// | `add`/`sub`/`mul`  | equal shapes                    | same            |
/// | `broadcast`        | `[1,n]`, `[m,1]` or `[1,1]`     | `[m,n]`         |
/// | `concat_cols`      | `[m,n_i]`...                    | `[m,Σn_i]`      |
/// | `slice_cols`       | `[m,n]`, `a..b`                 | `[m,b-a]`       |
/// | `gather_rows`      | `[n,c]`, idx of len `k`         | `[k,c]`         |
/// | `scatter_add_rows` | `[k,c]`, idx of len `k`, `n`    | `[n,c]`         |
/// | `softmax_rows`     | `[m,n]`                         | `[m,n]`         |
/// | `segment_softmax`  | `[n,1]`, segment ids, `s`       | `[n,1]`         |
/// | `mean_rows`/`sum_rows` | `[m,n]`                     | `[1,n]`         |
/// | `sum_cols`         | `[m,n]`                         | `[m,1]`         |
/// | `edge_matvec`      | `[t,d*d]`, kinds len `e`, `[e,d]` | `[e,d]`       |
/// | `bce_with_logits`  | `[m,l]`, targets `[m,l]`, `l` weights | `[1,1]`   |
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` did not influence the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }

    pub(crate) fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads[var.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    pub(crate) fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.val(a).matmul(self.val(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(mismatch(op, self.val(a), self.val(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.val(a).zip_map(self.val(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    /// Expands a `[1,n]`, `[m,1]` or `[1,1]` value to `[rows, cols]`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        let src = self.val(a);
        let (r, c) = (src.rows(), src.cols());
        if !((r == 1 || r == rows) && (c == 1 || c == cols)) {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                left: src.shape().to_vec(),
                right: vec![rows, cols],
            });
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let si = if r == 1 { 0 } else { i };
            for j in 0..cols {
                let sj = if c == 1 { 0 } else { j };
                out.push(src.data()[si * c + sj]);
            }
        }
        Ok(self.push(Tensor::from_vec(vec![rows, cols], out), Op::Broadcast(a), &[a]))
    }

    /// Adds a `[1,n]` bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        let b = self.broadcast(bias, r, c)?;
        self.add(a, b)
    }

    /// Multiplies each row of `a` (`[m,n]`) by the matching entry of `col` (`[m,1]`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        let (r, c) = (self.val(a).rows(), self.val(a).cols());
        let b = self.broadcast(col, r, c)?;
        self.mul(a, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.val(parts[0]).rows();
        for &p in parts {
            if self.val(p).rows() != rows {
                return Err(mismatch("concat_cols", self.val(parts[0]), self.val(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.val(p).row_slice(i));
            }
        }
        Ok(self.push(
            Tensor::from_vec(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let src = self.val(a);
        if start > end || end > src.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                left: src.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let rows = src.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            out.extend_from_slice(&src.row_slice(i)[start..end]);
        }
        Ok(self.push(
            Tensor::from_vec(vec![rows, end - start], out),
            Op::SliceCols(a, start),
            &[a],
        ))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, TensorError> {
        let src = self.val(a);
        let c = src.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= src.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: src.rows(),
                });
            }
            out.extend_from_slice(src.row_slice(i));
        }
        Ok(self.push(Tensor::from_vec(vec![idx.len(), c], out), Op::GatherRows(a, idx), &[a]))
    }

    /// `out[idx[i]] += a[i]` into `n` zero rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Result<Var, TensorError> {
        let src = self.val(a);
        if idx.len() != src.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                left: src.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let c = src.cols();
        let mut out = vec![0.0; n * c];
        for (i, &t) in idx.iter().enumerate() {
            if t >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: t,
                    len: n,
                });
            }
            for (o, &v) in out[t * c..(t + 1) * c].iter_mut().zip(src.row_slice(i)) {
                *o += v;
            }
        }
        Ok(self.push(Tensor::from_vec(vec![n, c], out), Op::ScatterAddRows(a, idx), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        // NaN stays NaN
        let out = self.val(a).map(|x| if x < 0.0 { 0.0 } else { x });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.val(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.val(a);
        let c = src.cols();
        let mut out = src.data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let out = Tensor::from_vec(src.shape().to_vec(), out);
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Softmax of a `[n,1]` column within each segment.
    pub fn segment_softmax(&mut self, a: Var, segments: Arc<[usize]>, n_segments: usize) -> Result<Var, TensorError> {
        let src = self.val(a);
        if src.cols() != 1 || src.rows() != segments.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: src.shape().to_vec(),
                right: vec![segments.len(), 1],
            });
        }
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (&s, &v) in segments.iter().zip(src.data()) {
            if s >= n_segments {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_softmax",
                    index: s,
                    len: n_segments,
                });
            }
            if v > max[s] || v.is_nan() {
                max[s] = v;
            }
        }
        let mut denom = vec![0.0; n_segments];
        let mut out: Vec<f64> = segments
            .iter()
            .zip(src.data())
            .map(|(&s, &v)| {
                let e = (v - max[s]).exp();
                denom[s] += e;
                e
            })
            .collect();
        for (o, &s) in out.iter_mut().zip(segments.iter()) {
            *o /= denom[s];
        }
        let shape = src.shape().to_vec();
        Ok(self.push(Tensor::from_vec(shape, out), Op::SegmentSoftmax(a, segments), &[a]))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let sums = column_sums(self.val(a));
        let m = self.val(a).rows() as f64;
        let out = sums.map(|v| v / m);
        self.push(out, Op::MeanRows(a), &[a])
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = column_sums(self.val(a));
        self.push(out, Op::SumRows(a), &[a])
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = self.val(a);
        let out: Vec<f64> = (0..src.rows()).map(|i| src.row_slice(i).iter().sum()).collect();
        let out = Tensor::from_vec(vec![src.rows(), 1], out);
        self.push(out, Op::SumCols(a), &[a])
    }

    /// Per-edge matrix-vector product `out[e] = M[kinds[e]] · x[e]`, where each
    /// row of `mats` holds a row-major `d × d` matrix.
    pub fn edge_matvec(&mut self, mats: Var, kinds: Arc<[usize]>, x: Var) -> Result<Var, TensorError> {
        let (m, xv) = (self.val(mats), self.val(x));
        let d = xv.cols();
        if m.cols() != d * d || kinds.len() != xv.rows() {
            return Err(mismatch("edge_matvec", m, xv));
        }
        let mut out = vec![0.0; xv.rows() * d];
        for (e, &k) in kinds.iter().enumerate() {
            if k >= m.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "edge_matvec",
                    index: k,
                    len: m.rows(),
                });
            }
            let mat = m.row_slice(k);
            let xe = xv.row_slice(e);
            for i in 0..d {
                out[e * d + i] = mat[i * d..(i + 1) * d].iter().zip(xe).map(|(a, b)| a * b).sum();
            }
        }
        let out = Tensor::from_vec(vec![xv.rows(), d], out);
        Ok(self.push(out, Op::EdgeMatVec { mats, kinds, x }, &[mats, x]))
    }

    /// `Σ_i Σ_l w_l · BCE(sigmoid(z_il), y_il)` in the overflow-free form
    /// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: Arc<Tensor>,
        weights: Arc<[f64]>,
    ) -> Result<Var, TensorError> {
        let z = self.val(logits);
        if z.shape() != targets.shape() || weights.len() != z.cols() {
            return Err(mismatch("bce_with_logits", z, &targets));
        }
        let l = z.cols();
        let loss: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .enumerate()
            .map(|(k, (&zi, &yi))| weights[k % l] * (softplus(zi) - zi * yi))
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`. Each tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.val(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.val(loss).shape().to_vec()));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(self.val(loss).shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, contrib: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = &nodes[idx].value;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[a.0].needs_grad {
                    acc(*a, g.matmul_nt(&nodes[b.0].value));
                }
                if nodes[b.0].needs_grad {
                    acc(*b, nodes[a.0].value.matmul_tn(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(&nodes[b.0].value, |x, y| x * y));
                acc(*b, g.zip_map(&nodes[a.0].value, |x, y| x * y));
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Broadcast(a) => {
                let src = &nodes[a.0].value;
                let (r, c) = (src.rows(), src.cols());
                let mut red = vec![0.0; r * c];
                for i in 0..g.rows() {
                    let si = if r == 1 { 0 } else { i };
                    for j in 0..g.cols() {
                        let sj = if c == 1 { 0 } else { j };
                        red[si * c + sj] += g.get(i, j);
                    }
                }
                acc(*a, Tensor::from_vec(vec![r, c], red));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    let mut part = Vec::with_capacity(g.rows() * w);
                    for i in 0..g.rows() {
                        part.extend_from_slice(&g.row_slice(i)[offset..offset + w]);
                    }
                    acc(p, Tensor::from_vec(vec![g.rows(), w], part));
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let src = &nodes[a.0].value;
                let mut full = Tensor::zeros(src.shape().to_vec());
                let c = src.cols();
                let w = g.cols();
                for i in 0..g.rows() {
                    full.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                }
                acc(*a, full);
            }
            Op::GatherRows(a, idx) => {
                let src = &nodes[a.0].value;
                let c = src.cols();
                let mut full = vec![0.0; src.len()];
                for (i, &t) in idx.iter().enumerate() {
                    for (o, &v) in full[t * c..(t + 1) * c].iter_mut().zip(g.row_slice(i)) {
                        *o += v;
                    }
                }
                acc(*a, Tensor::from_vec(src.shape().to_vec(), full));
            }
            Op::ScatterAddRows(a, idx) => {
                let c = g.cols();
                let mut part = Vec::with_capacity(idx.len() * c);
                for &t in idx.iter() {
                    part.extend_from_slice(g.row_slice(t));
                }
                acc(*a, Tensor::from_vec(vec![idx.len(), c], part));
            }
            Op::Relu(a) => acc(*a, g.zip_map(&nodes[a.0].value, |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |gv, s| gv * s * (1.0 - s))),
            Op::Tanh(a) => acc(*a, g.zip_map(out, |gv, t| gv * (1.0 - t * t))),
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                let mut d = vec![0.0; out.len()];
                for i in 0..out.rows() {
                    let y = out.row_slice(i);
                    let gy = g.row_slice(i);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[i * c + j] = y[j] * (gy[j] - dot);
                    }
                }
                acc(*a, Tensor::from_vec(out.shape().to_vec(), d));
            }
            Op::SegmentSoftmax(a, seg) => {
                let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for ((&s, &y), &gy) in seg.iter().zip(out.data()).zip(g.data()) {
                    dot[s] += y * gy;
                }
                let d: Vec<f64> = seg
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&s, &y), &gy)| y * (gy - dot[s]))
                    .collect();
                acc(*a, Tensor::from_vec(out.shape().to_vec(), d));
            }
            Op::MeanRows(a) | Op::SumRows(a) => {
                let src = &nodes[a.0].value;
                let scale = match &nodes[idx].op {
                    Op::MeanRows(_) => 1.0 / src.rows() as f64,
                    _ => 1.0,
                };
                let mut d = Vec::with_capacity(src.len());
                for _ in 0..src.rows() {
                    d.extend(g.data().iter().map(|v| v * scale));
                }
                acc(*a, Tensor::from_vec(src.shape().to_vec(), d));
            }
            Op::SumCols(a) => {
                let src = &nodes[a.0].value;
                let mut d = Vec::with_capacity(src.len());
                for i in 0..src.rows() {
                    d.extend(std::iter::repeat_n(g.data()[i], src.cols()));
                }
                acc(*a, Tensor::from_vec(src.shape().to_vec(), d));
            }
            Op::EdgeMatVec { mats, kinds, x } => {
                let m = &nodes[mats.0].value;
                let xv = &nodes[x.0].value;
                let d = xv.cols();
                if nodes[mats.0].needs_grad {
                    let mut dm = vec![0.0; m.len()];
                    for (e, &k) in kinds.iter().enumerate() {
                        let ge = g.row_slice(e);
                        let xe = xv.row_slice(e);
                        let block = &mut dm[k * d * d..(k + 1) * d * d];
                        for i in 0..d {
                            let gi = ge[i];
                            for (o, &xj) in block[i * d..(i + 1) * d].iter_mut().zip(xe) {
                                *o += gi * xj;
                            }
                        }
                    }
                    acc(*mats, Tensor::from_vec(m.shape().to_vec(), dm));
                }
                if nodes[x.0].needs_grad {
                    let mut dx = vec![0.0; xv.len()];
                    for (e, &k) in kinds.iter().enumerate() {
                        let mat = m.row_slice(k);
                        let ge = g.row_slice(e);
                        let dxe = &mut dx[e * d..(e + 1) * d];
                        for i in 0..d {
                            let gi = ge[i];
                            for (o, &mij) in dxe.iter_mut().zip(&mat[i * d..(i + 1) * d]) {
                                *o += mij * gi;
                            }
                        }
                    }
                    acc(*x, Tensor::from_vec(xv.shape().to_vec(), dx));
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                let z = &nodes[logits.0].value;
                let l = z.cols();
                let gs = g.item();
                let d: Vec<f64> = z
                    .data()
                    .iter()
                    .zip(targets.data())
                    .enumerate()
                    .map(|(k, (&zi, &yi))| gs * weights[k % l] * (sigmoid(zi) - yi))
                    .collect();
                acc(*logits, Tensor::from_vec(z.shape().to_vec(), d));
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, |m, v| if v > m || v.is_nan() { v } else { m });
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = vec![0.0; c];
    for i in 0..t.rows() {
        for (o, &v) in out.iter_mut().zip(t.row_slice(i)) {
            *o += v;
        }
    }
    Tensor::from_vec(vec![1, c], out)
}
