use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{ParamGrads, ParamId, ParamStore, Tensor};
use super::{AutodiffError, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Train mode enables dropout; eval mode turns it into the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    GradReverse(Var, f64),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// A tape of operations over parameters borrowed from a [`ParamStore`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    mode: Mode,
    seed: u64,
    dropout_calls: u64,
}

/// Result of [`Graph::backward`]: per-node gradients plus per-parameter gradients.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if the node requires grad
    /// and the loss reaches it.
    pub fn of(&self, var: Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id)
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("length computed from dims")
}

/// `out[m x n] += a[m x k] * b[k x n]`
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x n] += a[m x k] * b[n x k]^T`
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k x n] += a[m x k]^T * b[m x n]`
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, mode: Mode) -> Self {
        Self::with_seed(params, mode, 0)
    }

    /// `seed` drives every dropout mask drawn through [`Graph::dropout`].
    pub fn with_seed(params: &'p ParamStore, mode: Mode, seed: u64) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            mode,
            seed,
            dropout_calls: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        match &self.nodes[var.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported in [`Gradients::of`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (ta.dims(), tb.dims());
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    /// `a * b^T`, the shape of a linear layer with `(out, in)` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (n, k2)) = (ta.dims(), tb.dims());
        if k != k2 {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(matrix(m, n, out), Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims();
        let out = transpose(t.data(), r, c);
        let rg = self.requires(a);
        self.push(matrix(c, r, out), Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(shape_err("add", ta, tb));
        }
        let (r, c) = ta.dims();
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(matrix(r, c, out), Op::Add(a, b), rg))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = ta.dims();
        if tr.dims() != (1, n) {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut out = ta.data().to_vec();
        for chunk in out.chunks_mut(n.max(1)) {
            for (o, b) in chunk.iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(matrix(m, n, out), Op::AddRow(a, row), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(shape_err("mul", ta, tb));
        }
        let (r, c) = ta.dims();
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(matrix(r, c, out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims();
        let out = t.data().iter().map(|x| x * s).collect();
        let rg = self.requires(a);
        self.push(matrix(r, c, out), Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims();
        let out = t.data().iter().map(|x| x.max(0.0)).collect();
        let rg = self.requires(a);
        self.push(matrix(r, c, out), Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims();
        let out = t.data().iter().map(|x| x.tanh()).collect();
        let rg = self.requires(a);
        Ok(self.push(matrix(r, c, out), Op::Tanh(a), rg))
    }

    /// Softmax along `axis` (0: down each column, 1: across each row).
    /// Entries equal to `-inf` receive zero probability.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        match axis {
            1 => self.softmax_rows(a),
            0 => {
                let t = self.transpose(a);
                let s = self.softmax_rows(t)?;
                Ok(self.transpose(s))
            }
            _ => Err(AutodiffError::InvalidArgument {
                op: "softmax",
                reason: format!("axis {axis} out of range for a matrix"),
            }),
        }
    }

    fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = t.row_slice(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(AutodiffError::InvalidArgument {
                    op: "softmax",
                    reason: format!("row {i} is entirely masked"),
                });
            }
            let dst = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for (d, x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        let rg = self.requires(a);
        Ok(self.push(matrix(r, c, out), Op::Softmax(a), rg))
    }

    /// Concatenation along `axis` (0: stack rows, 1: join columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                reason: "no inputs".into(),
            });
        }
        let first = self.value(parts[0]).clone();
        let (r0, c0) = first.dims();
        let rg = parts.iter().any(|&p| self.requires(p));
        match axis {
            0 => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != c0 {
                        return Err(shape_err("concat", &first, t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Ok(self.push(matrix(rows, c0, data), Op::ConcatRows(parts.to_vec()), rg))
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != r0 {
                        return Err(shape_err("concat", &first, t));
                    }
                    cols += t.cols();
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Ok(self.push(matrix(r0, cols, data), Op::ConcatCols(parts.to_vec()), rg))
            }
            _ => Err(AutodiffError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} out of range for a matrix"),
            }),
        }
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims();
        if start + len > c {
            return Err(AutodiffError::InvalidArgument {
                op: "slice_cols",
                reason: format!("columns {start}..{} out of range for {c}", start + len),
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let rg = self.requires(a);
        Ok(self.push(matrix(r, len, data), Op::SliceCols { x: a, start }, rg))
    }

    /// Gathers rows of `table` (one per id) into an `ids.len() x d` matrix.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::InvalidArgument {
                    op: "embedding_lookup",
                    reason: format!("id {id} out of range for table with {v} rows"),
                });
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let rg = self.requires(table);
        Ok(self.push(
            matrix(ids.len(), d, data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (r, c) = tx.dims();
        if tg.dims() != (1, c) {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.dims() != (1, c) {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = tx.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            matrix(r, c, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout with an explicit seed. Identity in eval mode or at rate 0.
    pub fn dropout_seeded(&mut self, x: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidArgument {
                op: "dropout",
                reason: format!("rate {rate} outside [0, 1)"),
            });
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let (r, c) = t.dims();
        let mask: Vec<f64> = (0..r * c)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.requires(x);
        Ok(self.push(matrix(r, c, out), Op::Dropout { x, mask }, rg))
    }

    /// Dropout seeded from the graph seed and a per-graph call counter.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let seed = splitmix64(self.seed ^ splitmix64(self.dropout_calls));
        self.dropout_calls += 1;
        self.dropout_seeded(x, rate, seed)
    }

    /// Mean cross-entropy of row-wise softmax(logits) against class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, c) = t.dims();
        if targets.len() != n || n == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "cross_entropy",
                reason: format!("{} targets for {n} rows of logits", targets.len()),
            });
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            if y >= c {
                return Err(AutodiffError::InvalidArgument {
                    op: "cross_entropy",
                    reason: format!("target {y} out of range for {c} classes"),
                });
            }
            let row = t.row_slice(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[y];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let rg = self.requires(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.requires(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.requires(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Gradient reversal: identity forward, upstream gradient times `-lambda` backward.
    pub fn gradient_reversal(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "gradient_reversal",
                reason: format!("lambda {lambda} must be >= 0"),
            });
        }
        let value = self.value(x).clone();
        let rg = self.requires(x);
        Ok(self.push(value, Op::GradReverse(x, lambda), rg))
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.requires(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = ParamGrads(vec![None; self.params.len()]);
        for (&id, &var) in &self.param_nodes {
            if let Some(g) = &grads[var.0] {
                let shape = self.params.value(id).shape().to_vec();
                params.0[id.0] = Some(Tensor::new(shape, g.clone()).expect("grad matches param"));
            }
        }
        let nodes = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|g| {
                    let (r, c) = self.value(Var(i)).dims();
                    matrix(r, c, g)
                })
            })
            .collect();
        Ok(Gradients { nodes, params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |var: Var, contrib: Vec<f64>| {
            if !self.requires(var) {
                return;
            }
            match &mut grads[var.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = self.value(Var(i));
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ((m, k), (_, n)) = (ta.dims(), tb.dims());
                if self.requires(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, tb.data(), &mut da, m, n, k);
                    acc(*a, da);
                }
                if self.requires(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(ta.data(), g, &mut db, m, k, n);
                    acc(*b, db);
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ((m, k), (n, _)) = (ta.dims(), tb.dims());
                if self.requires(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(g, tb.data(), &mut da, m, n, k);
                    acc(*a, da);
                }
                if self.requires(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm_tn(g, ta.data(), &mut db, m, n, k);
                    acc(*b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims();
                acc(*a, transpose(g, r, c));
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.to_vec());
                let n = out.cols();
                let mut dr = vec![0.0; n];
                for chunk in g.chunks(n.max(1)) {
                    dr.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                }
                acc(*row, dr);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, g.iter().zip(tb.data()).map(|(g, y)| g * y).collect());
                acc(*b, g.iter().zip(ta.data()).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|v| v * s).collect()),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    g.iter()
                        .zip(x.data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Tanh(a) => acc(
                *a,
                g.iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect(),
            ),
            Op::Softmax(a) => {
                let (r, c) = out.dims();
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    let y = &out.data()[row * c..(row + 1) * c];
                    let gy = &g[row * c..(row + 1) * c];
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[row * c + j] = y[j] * (gy[j] - dot);
                    }
                }
                acc(*a, dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = out.dims();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut dp = Vec::with_capacity(r * c);
                    for row in 0..r {
                        dp.extend_from_slice(&g[row * total + offset..row * total + offset + c]);
                    }
                    acc(p, dp);
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims();
                let len = out.cols();
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    dx[row * c + start..row * c + start + len]
                        .copy_from_slice(&g[row * len..(row + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::Embedding { table, ids } => {
                let (v, d) = self.value(*table).dims();
                let mut dt = vec![0.0; v * d];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[row * d + j];
                    }
                }
                acc(*table, dt);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = out.dims();
                let tg = self.value(*gamma).data();
                if self.requires(*gamma) {
                    let mut dg = vec![0.0; c];
                    for row in 0..r {
                        for j in 0..c {
                            dg[j] += g[row * c + j] * xhat[row * c + j];
                        }
                    }
                    acc(*gamma, dg);
                }
                if self.requires(*beta) {
                    let mut db = vec![0.0; c];
                    for row in 0..r {
                        for j in 0..c {
                            db[j] += g[row * c + j];
                        }
                    }
                    acc(*beta, db);
                }
                if self.requires(*x) {
                    let mut dx = vec![0.0; r * c];
                    for row in 0..r {
                        let dxhat: Vec<f64> = (0..c).map(|j| g[row * c + j] * tg[j]).collect();
                        let xh = &xhat[row * c..(row + 1) * c];
                        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                        let mean_dx =
                            dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            dx[row * c + j] = inv_std[row] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Dropout { x, mask } => {
                acc(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let n = targets.len() as f64;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * g[0] / n).collect();
                for (row, &y) in targets.iter().enumerate() {
                    dl[row * c + y] -= g[0] / n;
                }
                acc(*logits, dl);
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                acc(*a, vec![g[0]; len]);
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                acc(*a, vec![g[0] / len.max(1) as f64; len]);
            }
            Op::GradReverse(a, lambda) => acc(*a, g.iter().map(|v| -lambda * v).collect()),
        }
    }
}
