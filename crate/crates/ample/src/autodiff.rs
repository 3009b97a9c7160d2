//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! Every differentiable computation in this crate (cross-attention, the mix
//! block, the prompt backend, the classification head) is recorded on a
//! [`Tape`] of [`Array2<f64>`] nodes. Calling [`Tape::backward`] yields exact
//! analytic gradients for every node, which the test suites compare against
//! central finite differences.
//!
//! The op set is deliberately small: elementwise arithmetic, matrix
//! multiplication, broadcasts, row softmax, ReLU, concatenation/slicing,
//! row gathering (embedding lookup), layer/batch normalization and a fused
//! mean cross-entropy. Shape mismatches are contract violations and panic.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array1, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Scale(NodeId, f64),
    /// `(n, m) + (1, m)` broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `(n, m) * (1, m)` broadcast over rows.
    MulRow(NodeId, NodeId),
    /// `(n, m) * (n, 1)` broadcast over columns (per-row scaling).
    ScaleRows(NodeId, NodeId),
    AddConst(NodeId),
    MulConst(NodeId, Array2<f64>),
    SoftmaxRows(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    LayerNormRows {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    CrossEntropyMean {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Computation tape. Append-only; `backward` walks it in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input, constant or parameter node.
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = self.value(id);
        (v.nrows(), v.ncols())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.shape(a).1,
            self.shape(b).0,
            "matmul: inner dimensions differ"
        );
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    /// `(n, m) + (1, m)`: adds a row vector to every row.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.shape(row).0, 1, "add_row: rhs must have one row");
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row: width mismatch");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// `(n, m) * (1, m)`: multiplies every row elementwise by a row vector.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.shape(row).0, 1, "mul_row: rhs must have one row");
        assert_eq!(self.shape(a).1, self.shape(row).1, "mul_row: width mismatch");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// `(n, m) * (n, 1)`: scales row `i` by the scalar in row `i` of `col`.
    pub fn scale_rows(&mut self, a: NodeId, col: NodeId) -> NodeId {
        assert_eq!(self.shape(col).1, 1, "scale_rows: rhs must have one column");
        assert_eq!(
            self.shape(a).0,
            self.shape(col).0,
            "scale_rows: height mismatch"
        );
        let v = self.value(a) * self.value(col);
        self.push(v, Op::ScaleRows(a, col))
    }

    pub fn add_const(&mut self, a: NodeId, c: Array2<f64>) -> NodeId {
        assert_eq!(
            self.shape(a),
            (c.nrows(), c.ncols()),
            "add_const: shape mismatch"
        );
        let v = self.value(a) + &c;
        self.push(v, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: NodeId, c: Array2<f64>) -> NodeId {
        assert_eq!(
            self.shape(a),
            (c.nrows(), c.ncols()),
            "mul_const: shape mismatch"
        );
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    /// Numerically stable softmax applied to each row independently.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        assert!(lo < hi && hi <= self.shape(a).1, "slice_cols: bad range");
        let v = self.value(a).slice(s![.., lo..hi]).to_owned();
        self.push(v, Op::SliceCols(a, lo, hi))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Gathers the given rows of `a`, in order, possibly with repeats.
    /// The backward pass scatter-adds, so this doubles as embedding lookup.
    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> NodeId {
        assert!(!rows.is_empty(), "gather_rows: empty index list");
        let (n, m) = self.shape(a);
        assert!(rows.iter().all(|&r| r < n), "gather_rows: index out of range");
        let mut v = Array2::zeros((rows.len(), m));
        for (out, &r) in rows.iter().enumerate() {
            v.row_mut(out).assign(&self.value(a).row(r));
        }
        self.push(v, Op::GatherRows(a, rows))
    }

    /// Per-row normalization: `y = gamma * (x - mean) / sqrt(var + eps) + beta`
    /// with mean/variance taken over each row. `gamma` and `beta` are `1 x m`.
    pub fn layer_norm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, m), "layer_norm: gamma shape");
        assert_eq!(self.shape(beta), (1, m), "layer_norm: beta shape");
        let mut xhat = Array2::zeros((n, m));
        let mut inv_std = Array1::zeros(n);
        for i in 0..n {
            let row = self.value(x).row(i);
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..m {
                xhat[[i, j]] = (row[j] - mean) * is;
            }
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            v,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Batch normalization over columns using batch statistics (population
    /// variance). Returns the output node plus the batch mean and variance so
    /// the caller can maintain running statistics. Requires at least 2 rows.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> (NodeId, Array1<f64>, Array1<f64>) {
        let (n, m) = self.shape(x);
        assert!(n >= 2, "batch_norm_train: need at least 2 rows");
        assert_eq!(self.shape(gamma), (1, m), "batch_norm: gamma shape");
        assert_eq!(self.shape(beta), (1, m), "batch_norm: beta shape");
        let mean = self.value(x).mean_axis(Axis(0)).unwrap();
        let centered = self.value(x) - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let v = &xhat * self.value(gamma) + self.value(beta);
        let id = self.push(
            v,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        (id, mean, var)
    }

    /// Mean negative log-likelihood of the true classes under a row softmax
    /// of `logits`, computed through log-sum-exp (never takes `log 0`).
    /// Output is a `1 x 1` node.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let (n, k) = self.shape(logits);
        assert_eq!(labels.len(), n, "cross_entropy: one label per row");
        assert!(labels.iter().all(|&l| l < k), "cross_entropy: label range");
        let mut probs = Array2::zeros((n, k));
        let mut total = 0.0;
        for i in 0..n {
            let row = self.value(logits).row(i);
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let exps = row.mapv(|x| (x - max).exp());
            let sum: f64 = exps.sum();
            let lse = max + sum.ln();
            total += lse - row[labels[i]];
            for j in 0..k {
                probs[[i, j]] = exps[j] / sum;
            }
        }
        let v = Array2::from_elem((1, 1), total / n as f64);
        self.push(
            v,
            Op::CrossEntropyMean {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Ids of every softmax node recorded so far. The normalization
    /// invariant suite sweeps these to assert each row sums to one.
    pub fn softmax_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::SoftmaxRows(_)))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Reverse pass from `root` (which must be `1 x 1`). Returns gradients of
    /// the root with respect to every node on the tape.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            let g = match grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, &g * self.value(*b));
                    accumulate(&mut grads, *b, &g * self.value(*a));
                }
                Op::MatMul(a, b) => {
                    accumulate(&mut grads, *a, g.dot(&self.value(*b).t()));
                    accumulate(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.t().to_owned());
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, &g * *s);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *a, g.clone());
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                }
                Op::MulRow(a, row) => {
                    accumulate(&mut grads, *a, &g * self.value(*row));
                    let gr = (&g * self.value(*a))
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                }
                Op::ScaleRows(a, col) => {
                    accumulate(&mut grads, *a, &g * self.value(*col));
                    let gc = (&g * self.value(*a))
                        .sum_axis(Axis(1))
                        .insert_axis(Axis(1));
                    accumulate(&mut grads, *col, gc);
                }
                Op::AddConst(a) => {
                    accumulate(&mut grads, *a, g);
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut grads, *a, &g * c);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut dx = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = y
                            .row(i)
                            .iter()
                            .zip(g.row(i).iter())
                            .map(|(&yi, &gi)| yi * gi)
                            .sum();
                        for j in 0..y.ncols() {
                            dx[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &mask);
                }
                Op::ConcatCols(parts) => {
                    let mut lo = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        let gp = g.slice(s![.., lo..lo + w]).to_owned();
                        accumulate(&mut grads, p, gp);
                        lo += w;
                    }
                }
                Op::SliceCols(a, lo, hi) => {
                    let mut da = Array2::zeros(self.value(*a).raw_dim());
                    da.slice_mut(s![.., *lo..*hi]).assign(&g);
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut lo = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        let gp = g.slice(s![lo..lo + h, ..]).to_owned();
                        accumulate(&mut grads, p, gp);
                        lo += h;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut da = Array2::zeros(self.value(*a).raw_dim());
                    for (out, &r) in rows.iter().enumerate() {
                        let mut dst = da.row_mut(r);
                        dst += &g.row(out);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNormRows {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gamma_v = self.value(*gamma);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gamma_v;
                    let m = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for i in 0..xhat.nrows() {
                        let dxh = dxhat.row(i);
                        let xh = xhat.row(i);
                        let mean_dxh: f64 = dxh.sum() / m;
                        let mean_dxh_xh: f64 =
                            dxh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<f64>() / m;
                        for j in 0..xhat.ncols() {
                            dx[[i, j]] =
                                inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gamma_v = self.value(*gamma);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gamma_v;
                    let n = xhat.nrows() as f64;
                    let sum_dxh = dxhat.sum_axis(Axis(0));
                    let sum_dxh_xh = (&dxhat * xhat).sum_axis(Axis(0));
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for i in 0..xhat.nrows() {
                        for j in 0..xhat.ncols() {
                            dx[[i, j]] = inv_std[j] / n
                                * (n * dxhat[[i, j]]
                                    - sum_dxh[j]
                                    - xhat[[i, j]] * sum_dxh_xh[j]);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::CrossEntropyMean {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g[[0, 0]] / labels.len() as f64;
                    let mut dl = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        dl[[i, y]] -= 1.0;
                    }
                    accumulate(&mut grads, *logits, dl * scale);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `id`, or `None` if the root does not depend
    /// on that node.
    pub fn wrt(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }
}

/// Named parameter tensors in a fixed registration order.
///
/// Registration order drives deterministic initialization and optimizer
/// state alignment; checkpoints use sorted key order instead.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            !self.index.contains_key(name),
            "parameter '{name}' registered twice"
        );
        self.index.insert(name.to_owned(), self.values.len());
        self.names.push(name.to_owned());
        self.values.push(value);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        &self.values[idx]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        &mut self.values[idx]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Names in registration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    /// Pushes every parameter onto `tape` as a leaf and returns the handle
    /// map used by forward passes.
    pub fn bind(&self, tape: &mut Tape) -> ParamBinding {
        let ids = self
            .values
            .iter()
            .map(|v| tape.leaf(v.clone()))
            .collect();
        ParamBinding {
            ids,
            index: self.index.clone(),
        }
    }
}

/// Tape handles for a bound [`ParamStore`], aligned with its registration
/// order.
pub struct ParamBinding {
    ids: Vec<NodeId>,
    index: HashMap<String, usize>,
}

impl ParamBinding {
    pub fn node(&self, name: &str) -> NodeId {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        self.ids[idx]
    }

    /// Gradients aligned to the store's registration order; parameters the
    /// loss does not touch get zero gradients of matching shape.
    pub fn collect(&self, grads: &Gradients, store: &ParamStore) -> Vec<Array2<f64>> {
        self.ids
            .iter()
            .zip(store.values())
            .map(|(&id, value)| match grads.wrt(id) {
                Some(g) => g.clone(),
                None => Array2::zeros(value.raw_dim()),
            })
            .collect()
    }
}
