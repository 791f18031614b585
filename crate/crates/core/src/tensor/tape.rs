use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    AppendOnes(Var),
    Gather { table: Var, ids: Vec<usize> },
    Biaffine { hs: Var, u: Var, he: Var, hs_u: Vec<f64> },
    ConcatFlat(Vec<Var>),
    Sum(Var),
    BceWithLogits { logits: Var, targets: Vec<f64>, pos_weight: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records executed operations in topological order. Operands always precede
/// their results, so the backward pass is one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `d loss / d var`, or `None` if the loss does not depend on `var`.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        other => Err(TensorError::ShapeMismatch {
            op,
            lhs: other.to_vec(),
            rhs: vec![0, 0],
        }),
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
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

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// `out[m, n] += a[m, k] * b[k, n]`
fn gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m, n] += a[m, k] * b[n, k]^T`
fn gemm_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k, n] += a[m, k]^T * b[m, n]`
fn gemm_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2(ta, "matmul")?;
        let (k2, n) = dims2(tb, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(&mut out, ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = dims2(ta, "transpose")?;
        let d = ta.data();
        let value = Tensor::from_fn(&[n, m], |i| d[(i % m) * n + i / m]);
        Ok(self.push(value, Op::Transpose(a)))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn row_op(&mut self, a: Var, row: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (_, n) = dims2(ta, op)?;
        if tr.shape() != [n] {
            return Err(mismatch(op, ta, tr));
        }
        let r = tr.data();
        let data = ta.data().iter().enumerate().map(|(i, x)| f(*x, r[i % n])).collect();
        Tensor::new(ta.shape(), data)
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let value = self.row_op(a, bias, "add_row", |x, b| x + b)?;
        Ok(self.push(value, Op::AddRow(a, bias)))
    }

    /// Multiplies every row of an `m x n` matrix elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, a: Var, gain: Var) -> Result<Var, TensorError> {
        let value = self.row_op(a, gain, "mul_row", |x, g| x * g)?;
        Ok(self.push(value, Op::MulRow(a, gain)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape(), ta.data().iter().map(|x| x * factor).collect()).unwrap();
        self.push(value, Op::Scale(a, factor))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape(), ta.data().iter().map(|x| f(*x)).collect()).unwrap()
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = dims2(ta, "softmax_rows")?;
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(n.max(1)).take(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = dims2(ta, "layer_norm_rows")?;
        let mut out = ta.data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for row in out.chunks_mut(n.max(1)).take(m) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::LayerNormRows { x: a, inv_std }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = dims2(ta, "slice_cols")?;
        if start + len > n {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let d = ta.data();
        let value = Tensor::from_fn(&[m, len], |i| d[(i / len) * n + start + i % len]);
        Ok(self.push(value, Op::SliceCols { x: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::NoOperands { op: "concat_cols" })?;
        let (m, _) = dims2(self.value(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = dims2(t, "concat_cols")?;
            if r != m {
                return Err(mismatch("concat_cols", self.value(first), t));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(&[m, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Appends a constant-one column: `[m, n] -> [m, n + 1]`.
    pub fn append_ones(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = dims2(ta, "append_ones")?;
        let mut out = Vec::with_capacity(m * (n + 1));
        for row in ta.data().chunks(n.max(1)).take(m) {
            out.extend_from_slice(&row[..n]);
            out.push(1.0);
        }
        let value = Tensor::new(&[m, n + 1], out)?;
        Ok(self.push(value, Op::AppendOnes(a)))
    }

    /// Selects rows of `table` by index.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tt = self.value(table);
        let (v, d) = dims2(tt, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange { index: bad, len: v });
        }
        let src = tt.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `score[i][j] = sum_{a,b} hs[i][a] * u[a][0][b] * he[j][b]`.
    ///
    /// `u` may be `[p, 1, p]` or `[p, p]`; the result is `[l_s, l_e]`.
    pub fn biaffine(&mut self, hs: Var, u: Var, he: Var) -> Result<Var, TensorError> {
        let (ts, tu, te) = (self.value(hs), self.value(u), self.value(he));
        let (ls, p) = dims2(ts, "biaffine")?;
        let (le, p2) = dims2(te, "biaffine")?;
        let (ua, ub) = tu.matrix_dims().ok_or_else(|| mismatch("biaffine", ts, tu))?;
        if ua != p {
            return Err(mismatch("biaffine", ts, tu));
        }
        if ub != p2 {
            return Err(mismatch("biaffine", tu, te));
        }
        let mut hs_u = vec![0.0; ls * ub];
        gemm_acc(&mut hs_u, ts.data(), tu.data(), ls, p, ub);
        let mut out = vec![0.0; ls * le];
        gemm_nt_acc(&mut out, &hs_u, te.data(), ls, ub, le);
        let value = Tensor::new(&[ls, le], out)?;
        Ok(self.push(value, Op::Biaffine { hs, u, he, hs_u }))
    }

    /// Flattens and concatenates any number of tensors into one vector.
    pub fn concat_flat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::NoOperands { op: "concat_flat" });
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let n = out.len();
        let value = Tensor::new(&[n], out)?;
        Ok(self.push(value, Op::ConcatFlat(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Summed binary cross-entropy with logits, in the overflow-free form
    /// `w*y*softplus(-x) + (1-y)*softplus(x)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], pos_weight: f64) -> Result<Var, TensorError> {
        let tl = self.value(logits);
        if tl.numel() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let loss = tl
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| pos_weight * y * softplus(-x) + (1.0 - y) * softplus(x))
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                pos_weight,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let (lower, upper) = grads.split_at_mut(idx);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            let node = &self.nodes[idx];
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    gemm_nt_acc(slot(lower, nodes, *a), g, tb.data(), m, n, k);
                    gemm_tn_acc(slot(lower, nodes, *b), ta.data(), g, m, k, n);
                }
                Op::Transpose(a) => {
                    let (m, n) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                    let da = slot(lower, nodes, *a);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(lower, nodes, *a), g);
                    add_into(slot(lower, nodes, *b), g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    for (d, (gi, bi)) in slot(lower, nodes, *a).iter_mut().zip(g.iter().zip(vb)) {
                        *d += gi * bi;
                    }
                    for (d, (gi, ai)) in slot(lower, nodes, *b).iter_mut().zip(g.iter().zip(va)) {
                        *d += gi * ai;
                    }
                }
                Op::AddRow(a, bias) => {
                    add_into(slot(lower, nodes, *a), g);
                    let db = slot(lower, nodes, *bias);
                    let n = db.len();
                    for (i, gi) in g.iter().enumerate() {
                        db[i % n] += gi;
                    }
                }
                Op::MulRow(a, gain) => {
                    let (va, vg) = (nodes[a.0].value.data(), nodes[gain.0].value.data());
                    let n = vg.len();
                    for (i, d) in slot(lower, nodes, *a).iter_mut().enumerate() {
                        *d += g[i] * vg[i % n];
                    }
                    let dg = slot(lower, nodes, *gain);
                    for (i, gi) in g.iter().enumerate() {
                        dg[i % n] += gi * va[i];
                    }
                }
                Op::Scale(a, factor) => {
                    for (d, gi) in slot(lower, nodes, *a).iter_mut().zip(g) {
                        *d += gi * factor;
                    }
                }
                Op::Relu(a) => {
                    let va = nodes[a.0].value.data();
                    for (d, (gi, x)) in slot(lower, nodes, *a).iter_mut().zip(g.iter().zip(va)) {
                        if *x > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    for (d, (gi, yi)) in slot(lower, nodes, *a).iter_mut().zip(g.iter().zip(y)) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let n = node.value.shape()[1].max(1);
                    let y = node.value.data();
                    let da = slot(lower, nodes, *a);
                    for ((dr, gr), yr) in da.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
                Op::LayerNormRows { x, inv_std } => {
                    let n = node.value.shape()[1].max(1);
                    let xhat = node.value.data();
                    let dx = slot(lower, nodes, *x);
                    for (r, ((dr, gr), xr)) in dx.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        let mean_g = gr.iter().sum::<f64>() / n as f64;
                        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for ((d, gi), xi) in dr.iter_mut().zip(gr).zip(xr) {
                            *d += inv_std[r] * (gi - mean_g - xi * mean_gx);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let n = nodes[x.0].value.shape()[1];
                    let len = node.value.shape()[1];
                    let dx = slot(lower, nodes, *x);
                    for (i, gi) in g.iter().enumerate() {
                        dx[(i / len) * n + start + i % len] += gi;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.shape()[1];
                    let mut col = 0;
                    for p in parts {
                        let w = nodes[p.0].value.shape()[1];
                        let dp = slot(lower, nodes, *p);
                        for (i, row) in dp.chunks_mut(w.max(1)).enumerate() {
                            for (j, d) in row.iter_mut().enumerate() {
                                *d += g[i * total + col + j];
                            }
                        }
                        col += w;
                    }
                }
                Op::AppendOnes(a) => {
                    let n = nodes[a.0].value.shape()[1];
                    let da = slot(lower, nodes, *a);
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[(i / n) * (n + 1) + i % n];
                    }
                }
                Op::Gather { table, ids } => {
                    let d = nodes[table.0].value.shape()[1];
                    let dt = slot(lower, nodes, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
                Op::Biaffine { hs, u, he, hs_u } => {
                    let (ts, tu, te) = (&nodes[hs.0].value, &nodes[u.0].value, &nodes[he.0].value);
                    let (ls, p) = (ts.shape()[0], ts.shape()[1]);
                    let (le, q) = (te.shape()[0], te.shape()[1]);
                    // d(hs_u) = g * he
                    let mut d_hs_u = vec![0.0; ls * q];
                    gemm_acc(&mut d_hs_u, g, te.data(), ls, le, q);
                    gemm_tn_acc(slot(lower, nodes, *he), g, hs_u, ls, le, q);
                    gemm_nt_acc(slot(lower, nodes, *hs), &d_hs_u, tu.data(), ls, q, p);
                    gemm_tn_acc(slot(lower, nodes, *u), ts.data(), &d_hs_u, ls, p, q);
                }
                Op::ConcatFlat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let n = nodes[p.0].value.numel();
                        add_into(slot(lower, nodes, *p), &g[at..at + n]);
                        at += n;
                    }
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    slot(lower, nodes, *a).iter_mut().for_each(|d| *d += g0);
                }
                Op::BceWithLogits {
                    logits,
                    targets,
                    pos_weight,
                } => {
                    let g0 = g[0];
                    let x = nodes[logits.0].value.data();
                    for (d, (&xi, &yi)) in slot(lower, nodes, *logits).iter_mut().zip(x.iter().zip(targets)) {
                        let s = sigmoid(xi);
                        *d += g0 * (pos_weight * yi * (s - 1.0) + (1.0 - yi) * s);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a>(lower: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
    let n = nodes[v.0].value.numel();
    lower[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: &[usize], data: &[f64]) -> Var {
        tape.leaf(Tensor::new(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let i = tape.leaf(Tensor::eye(3));
        let out = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(out), tape.value(a));
    }

    #[test]
    fn matmul_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[3, 4]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), [2, 4]);
        let err = tape.matmul(b, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![3, 4],
                rhs: vec![3, 4]
            }
        );
    }

    #[test]
    fn scalar_biaffine() {
        let mut tape = Tape::new();
        let hs = leaf(&mut tape, &[1, 1], &[2.0]);
        let u = leaf(&mut tape, &[1, 1, 1], &[3.0]);
        let he = leaf(&mut tape, &[1, 1], &[5.0]);
        let s = tape.biaffine(hs, u, he).unwrap();
        assert_eq!(tape.value(s).data(), [30.0]);
    }

    #[test]
    fn identity_kernel_biaffine_is_dot_product() {
        let mut tape = Tape::new();
        let hs = leaf(&mut tape, &[2, 3], &[1.0, 0.5, -1.0, 2.0, 0.0, 1.0]);
        let he = leaf(&mut tape, &[2, 3], &[0.0, 1.0, 2.0, -1.0, 1.0, 3.0]);
        let mut eye = Tensor::eye(3);
        eye = Tensor::new(&[3, 1, 3], eye.into_data()).unwrap();
        let u = tape.leaf(eye);
        let s = tape.biaffine(hs, u, he).unwrap();
        let het = tape.transpose(he).unwrap();
        let dot = tape.matmul(hs, het).unwrap();
        assert_eq!(tape.value(s).data(), tape.value(dot).data());
    }

    #[test]
    fn sigmoid_values() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[0.0, 50.0, -50.0]);
        let y = tape.sigmoid(x);
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!(v[2] > 0.0 && v[2] < 1e-21);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, &[2, 2], &[1.0, -2.0, 3.0, 0.5]);
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).unwrap(), [1.0; 4]);

        let mut tape = Tape::new();
        let w = leaf(&mut tape, &[2, 2], &[1.0, -2.0, 3.0, 0.5]);
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).unwrap(), [2.0, -4.0, 6.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(&[2]));
        assert_eq!(tape.backward(w).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn bce_limits() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[4], &[50.0, -50.0, 50.0, -50.0]);
        let loss = tape.bce_with_logits(x, &[1.0, 0.0, 1.0, 0.0], 1.0).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-9);

        let z = tape.leaf(Tensor::zeros(&[7]));
        let loss = tape.bce_with_logits(z, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!((tape.value(loss).data()[0] - 7.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn gather_rejects_unknown_rows() {
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::zeros(&[3, 2]));
        assert_eq!(
            tape.gather_rows(t, &[0, 3]).unwrap_err(),
            TensorError::IndexOutOfRange { index: 3, len: 3 }
        );
    }
}
