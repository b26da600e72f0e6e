use std::borrow::Cow;
use std::collections::HashMap;

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{sigmoid, Gradients, NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    ScaleRows(Var, Vec<f64>),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Softmax(Var),
    LogSumExp(Var),
    Select(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Row(Var, usize),
}

struct Node<'p> {
    value: Cow<'p, [f64]>,
    rows: usize,
    cols: usize,
    op: Op,
}

/// Records a forward pass over rank-2 values so it can be replayed in reverse.
///
/// Parameter values are borrowed from the [`ParamStore`], never copied. A
/// fresh tape is used for each instance; [`Tape::clear`] resets one for reuse.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_vars: HashMap::new(),
        }
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.param_vars.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, value: Cow<'p, [f64]>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        Tensor::new(vec![r, c], self.value(v).to_vec()).expect("tape node shape")
    }

    fn dims(&self, v: Var) -> Vec<usize> {
        let (r, c) = self.shape(v);
        vec![r, c]
    }

    /// A constant leaf; receives no gradient. Rank-1 tensors become `1 × n`.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var, NumericsError> {
        let (r, c) = match t.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                return Err(NumericsError::Rank {
                    op: "constant",
                    expected: 2,
                    shape: s.to_vec(),
                })
            }
        };
        Ok(self.push(Cow::Owned(t.values().to_vec()), r, c, Op::Constant))
    }

    pub fn constant_row(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(Cow::Owned(values), 1, n, Op::Constant)
    }

    /// Leaf bound to a parameter; recorded once per tape.
    pub fn param(&mut self, id: ParamId) -> Result<Var, NumericsError> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let store = self.store;
        let t = store.tensor(id);
        let (r, c) = match t.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                return Err(NumericsError::Rank {
                    op: "param",
                    expected: 2,
                    shape: s.to_vec(),
                })
            }
        };
        let v = self.push(Cow::Borrowed(t.values()), r, c, Op::Param(id));
        self.param_vars.insert(id, v);
        Ok(v)
    }

    /// Rows of a rank-2 parameter, gathered by index. Backward yields row gradients.
    pub fn gather(&mut self, id: ParamId, rows: &[usize]) -> Result<Var, NumericsError> {
        let t = self.store.tensor(id);
        let (n, cols) = t.dims2()?;
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(NumericsError::Index {
                    op: "gather",
                    index: r,
                    len: n,
                });
            }
            out.extend_from_slice(t.row_slice(r));
        }
        Ok(self.push(Cow::Owned(out), rows.len(), cols, Op::Gather(id, rows.to_vec())))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NumericsError::shape(op, &self.dims(a), &self.dims(b)));
        }
        Ok(sa)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(Cow::Owned(v), r, c, Op::Add(a, b)))
    }

    /// `a[m×n] + b[1×n]` with `b` repeated over rows.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (1, c) {
            return Err(NumericsError::shape("add_row_broadcast", &self.dims(a), &self.dims(b)));
        }
        let bias = self.value(b);
        let v: Vec<f64> = self
            .value(a)
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(Cow::Owned(v), r, c, Op::AddRowBroadcast(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(Cow::Owned(v), r, c, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(Cow::Owned(v), r, c, Op::Mul(a, b)))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var, NumericsError> {
        let (rows, cols) = self.shape(a);
        if c.len() != rows * cols {
            return Err(NumericsError::shape("mul_const", &self.dims(a), &[c.len()]));
        }
        let v = self.value(a).iter().zip(&c).map(|(x, y)| x * y).collect();
        Ok(self.push(Cow::Owned(v), rows, cols, Op::MulConst(a, c)))
    }

    /// Inverted dropout; identity when `train` is false or `p == 0`.
    pub fn dropout<R: rand::Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        rng: &mut R,
        train: bool,
    ) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let mask = super::dropout_mask(self.value(a).len(), p, rng)?;
        self.mul_const(a, mask)
    }

    /// Multiply row `t` of `a` by the constant `factors[t]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<f64>) -> Result<Var, NumericsError> {
        let (rows, cols) = self.shape(a);
        if factors.len() != rows {
            return Err(NumericsError::shape("scale_rows", &self.dims(a), &[factors.len()]));
        }
        let v = self
            .value(a)
            .chunks(cols.max(1))
            .zip(&factors)
            .flat_map(|(row, f)| row.iter().map(move |x| x * f))
            .collect();
        Ok(self.push(Cow::Owned(v), rows, cols, Op::ScaleRows(a, factors)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(NumericsError::shape("matmul", &self.dims(a), &self.dims(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(Cow::Owned(out), m, n, Op::MatMul(a, b)))
    }

    /// `a[m×k] · b[n×k]ᵀ`, the layout of a linear layer with `[out, in]` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(NumericsError::shape("matmul_nt", &self.dims(a), &self.dims(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(Cow::Owned(out), m, n, Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Cow::Owned(out), c, r, Op::Transpose(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(Cow::Owned(v), r, c, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(a);
        let v = super::softmax(self.value(a))?;
        Ok(self.push(Cow::Owned(v), r, c, Op::Softmax(a)))
    }

    /// `log Σ exp` over all entries of `a`, as a `1 × 1` value.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = super::log_sum_exp(self.value(a))?;
        Ok(self.push(Cow::Owned(vec![v]), 1, 1, Op::LogSumExp(a)))
    }

    /// Entry at flat row-major `index`, as a `1 × 1` value.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var, NumericsError> {
        let len = self.value(a).len();
        if index >= len {
            return Err(NumericsError::Index {
                op: "select",
                index,
                len,
            });
        }
        let v = self.value(a)[index];
        Ok(self.push(Cow::Owned(vec![v]), 1, 1, Op::Select(a, index)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty { op: "concat_cols" })?;
        let rows = self.shape(first).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(NumericsError::shape("concat_cols", &self.dims(first), &self.dims(p)));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(Cow::Owned(out), rows, total, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty { op: "concat_rows" })?;
        let cols = self.shape(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(NumericsError::shape("concat_rows", &self.dims(first), &self.dims(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(Cow::Owned(out), rows, cols, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(NumericsError::Index {
                op: "slice_cols",
                index: start + len,
                len: cols,
            });
        }
        let src = self.value(a);
        let out = (0..rows)
            .flat_map(|r| src[r * cols + start..r * cols + start + len].iter().copied())
            .collect();
        Ok(self.push(Cow::Owned(out), rows, len, Op::SliceCols(a, start)))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = self.shape(a);
        if r >= rows {
            return Err(NumericsError::Index {
                op: "row",
                index: r,
                len: rows,
            });
        }
        let out = self.value(a)[r * cols..(r + 1) * cols].to_vec();
        Ok(self.push(Cow::Owned(out), 1, cols, Op::Row(a, r)))
    }

    /// Reverse sweep from a `1 × 1` output. Returns gradients for every
    /// parameter leaf and gathered row reachable from `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients, NumericsError> {
        if self.shape(output) != (1, 1) {
            return Err(NumericsError::shape("backward", &self.dims(output), &[1, 1]));
        }
        if !self.scalar(output).is_finite() {
            return Err(NumericsError::NonFinite("backward seed".into()));
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); output.0 + 1];
        adj[output.0] = vec![1.0];
        let mut grads = Gradients::new(self.store.len());

        for idx in (0..=output.0).rev() {
            let g = std::mem::take(&mut adj[idx]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[idx];
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if self.store.get(*id).trainable {
                        grads.add_dense(*id, &g);
                    }
                }
                Op::Gather(id, ids) => {
                    if self.store.get(*id).trainable {
                        for (t, &r) in ids.iter().enumerate() {
                            grads.add_row(*id, r, &g[t * cols..(t + 1) * cols]);
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g, |x| x);
                    accumulate(&mut adj, *b, &g, |x| x);
                }
                Op::AddRowBroadcast(a, b) => {
                    accumulate(&mut adj, *a, &g, |x| x);
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks(cols.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    add_into(&mut adj, *b, &gb);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, &g, |x| x);
                    accumulate(&mut adj, *b, &g, |x| -x);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    add_into(&mut adj, *a, &ga);
                    add_into(&mut adj, *b, &gb);
                }
                Op::MulConst(a, c) => {
                    let ga: Vec<f64> = g.iter().zip(c).map(|(x, y)| x * y).collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::ScaleRows(a, f) => {
                    let ga: Vec<f64> = g
                        .chunks(cols.max(1))
                        .zip(f)
                        .flat_map(|(row, s)| row.iter().map(move |x| x * s))
                        .collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let mut ga = vec![0.0; m * k];
                    matmul_nt_into(&g, self.value(*b), &mut ga, m, n, k);
                    let mut gb = vec![0.0; k * n];
                    matmul_tn_into(self.value(*a), &g, &mut gb, m, k, n);
                    add_into(&mut adj, *a, &ga);
                    add_into(&mut adj, *b, &gb);
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let mut ga = vec![0.0; m * k];
                    matmul_into(&g, self.value(*b), &mut ga, m, n, k);
                    let mut gb = vec![0.0; n * k];
                    matmul_tn_into(&g, self.value(*a), &mut gb, m, n, k);
                    add_into(&mut adj, *a, &ga);
                    add_into(&mut adj, *b, &gb);
                }
                Op::Transpose(a) => {
                    let mut ga = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] = g[i * cols + j];
                        }
                    }
                    add_into(&mut adj, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.iter())
                        .map(|(x, y)| x * y * (1.0 - y))
                        .collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.iter())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(node.value.iter()).map(|(x, y)| x * y).collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner: f64 = g.iter().zip(y.iter()).map(|(x, p)| x * p).sum();
                    let ga: Vec<f64> = g.iter().zip(y.iter()).map(|(x, p)| p * (x - inner)).collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::LogSumExp(a) => {
                    let out = node.value[0];
                    let ga: Vec<f64> = self.value(*a).iter().map(|x| g[0] * (x - out).exp()).collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::Select(a, index) => {
                    let len = self.value(*a).len();
                    let slot = ensure(&mut adj, *a, len);
                    slot[*index] += g[0];
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        let slot = ensure(&mut adj, p, pr * pc);
                        for r in 0..rows {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            slot[r * pc..(r + 1) * pc]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(s, v)| *s += v);
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        add_into(&mut adj, p, &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (ar, ac) = self.shape(*a);
                    let slot = ensure(&mut adj, *a, ar * ac);
                    for r in 0..rows {
                        slot[r * ac + start..r * ac + start + cols]
                            .iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(s, v)| *s += v);
                    }
                }
                Op::Row(a, r) => {
                    let (ar, ac) = self.shape(*a);
                    let slot = ensure(&mut adj, *a, ar * ac);
                    slot[r * ac..(r + 1) * ac]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, v)| *s += v);
                }
            }
        }
        if !grads.is_finite() {
            return Err(NumericsError::NonFinite("gradients".into()));
        }
        Ok(grads)
    }
}

fn ensure(adj: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
    let slot = &mut adj[v.0];
    if slot.is_empty() {
        slot.resize(len, 0.0);
    }
    slot
}

fn add_into(adj: &mut [Vec<f64>], v: Var, g: &[f64]) {
    let slot = &mut adj[v.0];
    if slot.is_empty() {
        slot.extend_from_slice(g);
    } else {
        slot.iter_mut().zip(g).for_each(|(s, x)| *s += x);
    }
}

fn accumulate(adj: &mut [Vec<f64>], v: Var, g: &[f64], f: impl Fn(f64) -> f64) {
    let slot = &mut adj[v.0];
    if slot.is_empty() {
        slot.extend(g.iter().map(|&x| f(x)));
    } else {
        slot.iter_mut().zip(g).for_each(|(s, &x)| *s += f(x));
    }
}
