//! Minimal reverse-mode autodiff over dense 2-D 64-bit tensors.
//!
//! Nodes live in an append-only tape; every op records its parents and an
//! op tag, and `backward` walks the tape in reverse creation order (which
//! is a topological order by construction). Higher-level pieces — softmax,
//! layer norm, attention — are composed from these primitives so only a
//! handful of backward rules need hand derivation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Pow(Var, f64),
    Exp(Var),
    Silu(Var),
    Sigmoid(Var),
    Abs(Var),
    AddRowBroadcast(Var, Var),
    MulRowBroadcast(Var, Var),
    AddColBroadcast(Var, Var),
    MulColBroadcast(Var, Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MaxPoolRows(Var, usize),
    RowsDot(Var, Var),
    SumAll(Var),
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            grad: vec![0.0; data.len()],
            data,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "leaf data length mismatch");
        self.push(rows, cols, data, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        assert_eq!(self.shape(v), (1, 1));
        self.nodes[v.0].data[0]
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        for i in 0..m {
            for p in 0..k {
                let x = da[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += x * db[p * n + j];
                }
            }
        }
        self.push(m, n, out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let da = &self.nodes[a.0].data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = da[i * n + j];
            }
        }
        self.push(n, m, out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let (m, n) = self.shape(a);
        let data = self.zip(a, b, |x, y| x + y);
        self.push(m, n, data, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let (m, n) = self.shape(a);
        let data = self.zip(a, b, |x, y| x - y);
        self.push(m, n, data, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let (m, n) = self.shape(a);
        let data = self.zip(a, b, |x, y| x * y);
        self.push(m, n, data, Op::Mul(a, b))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        self.push(m, n, data, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    /// Elementwise power with constant exponent (inputs must stay in the
    /// domain where x^p is differentiable).
    pub fn pow(&mut self, a: Var, p: f64) -> Var {
        self.map(a, |x| x.powf(p), Op::Pow(a, p))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, |x| x / (1.0 + (-x).exp()), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    /// `[r,c] + [1,c]`, the bias-add pattern.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (1, n), "add_row_broadcast wants [1,{n}]");
        let db = self.nodes[b.0].data.clone();
        let data = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + db[i % n])
            .collect();
        self.push(m, n, data, Op::AddRowBroadcast(a, b))
    }

    /// `[r,c] * [1,c]`, the per-channel gain pattern.
    pub fn mul_row_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (1, n), "mul_row_broadcast wants [1,{n}]");
        let db = self.nodes[b.0].data.clone();
        let data = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x * db[i % n])
            .collect();
        self.push(m, n, data, Op::MulRowBroadcast(a, b))
    }

    /// `[r,c] + [r,1]`, broadcast along columns.
    pub fn add_col_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, 1), "add_col_broadcast wants [{m},1]");
        let db = self.nodes[b.0].data.clone();
        let data = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + db[i / n])
            .collect();
        self.push(m, n, data, Op::AddColBroadcast(a, b))
    }

    /// `[r,c] * [r,1]`, per-row scaling.
    pub fn mul_col_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, 1), "mul_col_broadcast wants [{m},1]");
        let db = self.nodes[b.0].data.clone();
        let data = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x * db[i / n])
            .collect();
        self.push(m, n, data, Op::MulColBroadcast(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= n, "slice_cols out of range");
        let da = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&da[i * n + start..i * n + start + len]);
        }
        self.push(m, len, data, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.shape(parts[0]).0;
        let n: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                let (pm, pn) = self.shape(p);
                assert_eq!(pm, m, "concat_cols row mismatch");
                let dp = &self.nodes[p.0].data;
                data.extend_from_slice(&dp[i * pn..(i + 1) * pn]);
            }
        }
        self.push(m, n, data, Op::ConcatCols(parts.to_vec()))
    }

    /// Select rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let (m, n) = self.shape(a);
        let da = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < m, "gather_rows index {i} out of {m}");
            data.extend_from_slice(&da[i * n..(i + 1) * n]);
        }
        self.push(idx.len(), n, data, Op::GatherRows(a, idx.to_vec()))
    }

    /// Columnwise max over consecutive groups of `group` rows; gradient
    /// flows to the first maximizer in each group.
    pub fn max_pool_rows(&mut self, a: Var, group: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(group >= 1 && m % group == 0, "max_pool_rows group mismatch");
        let out_rows = m / group;
        let da = &self.nodes[a.0].data;
        let mut data = vec![f64::NEG_INFINITY; out_rows * n];
        for i in 0..m {
            let o = i / group;
            for j in 0..n {
                let v = da[i * n + j];
                if v > data[o * n + j] {
                    data[o * n + j] = v;
                }
            }
        }
        self.push(out_rows, n, data, Op::MaxPoolRows(a, group))
    }

    /// Row-wise dot product: `[r,c] x [r,c] -> [r,1]`.
    pub fn rows_dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "rows_dot");
        let (m, n) = self.shape(a);
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let data = (0..m)
            .map(|i| (0..n).map(|j| da[i * n + j] * db[i * n + j]).sum())
            .collect();
        self.push(m, 1, data, Op::RowsDot(a, b))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].data.iter().sum();
        self.push(1, 1, vec![s], Op::SumAll(a))
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[root.0].grad[0] = 1.0;
        for idx in (0..=root.0).rev() {
            let op = self.nodes[idx].op.clone();
            let g = self.nodes[idx].grad.clone();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let (rows, cols) = (self.nodes[idx].rows, self.nodes[idx].cols);
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(a);
                    let n = cols;
                    let da = self.nodes[a.0].data.clone();
                    let db = self.nodes[b.0].data.clone();
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * db[p * n + j];
                            }
                            self.nodes[a.0].grad[i * k + p] += acc;
                        }
                    }
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += da[i * k + p] * g[i * n + j];
                            }
                            self.nodes[b.0].grad[p * n + j] += acc;
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = self.shape(a);
                    for i in 0..m {
                        for j in 0..n {
                            self.nodes[a.0].grad[i * n + j] += g[j * m + i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi;
                    }
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[b.0].grad[i] += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi;
                    }
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[b.0].grad[i] -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let da = self.nodes[a.0].data.clone();
                    let db = self.nodes[b.0].data.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi * db[i];
                        self.nodes[b.0].grad[i] += gi * da[i];
                    }
                }
                Op::Scale(a, s) => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi * s;
                    }
                }
                Op::AddScalar(a) => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi;
                    }
                }
                Op::Pow(a, p) => {
                    let da = self.nodes[a.0].data.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi * p * da[i].powf(p - 1.0);
                    }
                }
                Op::Exp(a) => {
                    let dy = self.nodes[idx].data.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi * dy[i];
                    }
                }
                Op::Silu(a) => {
                    let da = self.nodes[a.0].data.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        let s = 1.0 / (1.0 + (-da[i]).exp());
                        self.nodes[a.0].grad[i] += gi * (s + da[i] * s * (1.0 - s));
                    }
                }
                Op::Sigmoid(a) => {
                    let dy = self.nodes[idx].data.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi * dy[i] * (1.0 - dy[i]);
                    }
                }
                Op::Abs(a) => {
                    let da = self.nodes[a.0].data.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi * da[i].signum();
                    }
                }
                Op::AddRowBroadcast(a, b) => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi;
                    }
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[b.0].grad[i % cols] += gi;
                    }
                }
                Op::MulRowBroadcast(a, b) => {
                    let da = self.nodes[a.0].data.clone();
                    let db = self.nodes[b.0].data.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi * db[i % cols];
                        self.nodes[b.0].grad[i % cols] += gi * da[i];
                    }
                }
                Op::AddColBroadcast(a, b) => {
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi;
                    }
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[b.0].grad[i / cols] += gi;
                    }
                }
                Op::MulColBroadcast(a, b) => {
                    let da = self.nodes[a.0].data.clone();
                    let db = self.nodes[b.0].data.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        self.nodes[a.0].grad[i] += gi * db[i / cols];
                        self.nodes[b.0].grad[i / cols] += gi * da[i];
                    }
                }
                Op::SliceCols(a, start) => {
                    let (_, n) = self.shape(a);
                    for i in 0..rows {
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * n + start + j] += g[i * cols + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    for i in 0..rows {
                        let mut off = 0;
                        for &p in &parts {
                            let pn = self.shape(p).1;
                            for j in 0..pn {
                                self.nodes[p.0].grad[i * pn + j] += g[i * cols + off + j];
                            }
                            off += pn;
                        }
                    }
                }
                Op::GatherRows(a, idx2) => {
                    for (r, &i) in idx2.iter().enumerate() {
                        for j in 0..cols {
                            self.nodes[a.0].grad[i * cols + j] += g[r * cols + j];
                        }
                    }
                }
                Op::MaxPoolRows(a, group) => {
                    let (m, n) = self.shape(a);
                    let da = self.nodes[a.0].data.clone();
                    let dy = self.nodes[idx].data.clone();
                    for o in 0..rows {
                        for j in 0..n {
                            // first row attaining the max takes the gradient
                            for i in (o * group)..((o + 1) * group).min(m) {
                                if da[i * n + j] == dy[o * n + j] {
                                    self.nodes[a.0].grad[i * n + j] += g[o * n + j];
                                    break;
                                }
                            }
                        }
                    }
                }
                Op::RowsDot(a, b) => {
                    let (_, n) = self.shape(a);
                    let da = self.nodes[a.0].data.clone();
                    let db = self.nodes[b.0].data.clone();
                    for i in 0..rows {
                        for j in 0..n {
                            self.nodes[a.0].grad[i * n + j] += g[i] * db[i * n + j];
                            self.nodes[b.0].grad[i * n + j] += g[i] * da[i * n + j];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let gi = g[0];
                    for x in self.nodes[a.0].grad.iter_mut() {
                        *x += gi;
                    }
                }
            }
        }
    }
}

/// Affine map `x W + b` with shape validation at the public boundary.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (_, xin) = tape.shape(x);
    let (win, wout) = tape.shape(w);
    let bshape = tape.shape(b);
    if xin != win || bshape != (1, wout) {
        return Err(Error::ShapeError(format!(
            "linear: x[*,{xin}] W[{win},{wout}] b{bshape:?}"
        )));
    }
    let xw = tape.matmul(x, w);
    Ok(tape.add_row_broadcast(xw, b))
}

/// Numerically stable row softmax. The shift constant is the detached row
/// max, which does not change the function or its gradient.
pub fn softmax_rows(tape: &mut Tape, x: Var) -> Var {
    let (m, n) = tape.shape(x);
    let maxes: Vec<f64> = (0..m)
        .map(|i| {
            tape.data(x)[i * n..(i + 1) * n]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let shift = tape.leaf(m, 1, maxes.iter().map(|&v| -v).collect());
    let centered = tape.add_col_broadcast(x, shift);
    let e = tape.exp(centered);
    let ones = tape.leaf(n, 1, vec![1.0; n]);
    let sums = tape.matmul(e, ones);
    let inv = tape.pow(sums, -1.0);
    tape.mul_col_broadcast(e, inv)
}

/// Pre-norm layer normalization over each row, with learnable gain/bias.
pub fn layer_norm_rows(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Var {
    let (_, n) = tape.shape(x);
    let ones = tape.leaf(n, 1, vec![1.0; n]);
    let sums = tape.matmul(x, ones);
    let neg_mean = tape.scale(sums, -1.0 / n as f64);
    let centered = tape.add_col_broadcast(x, neg_mean);
    let sq = tape.rows_dot(centered, centered);
    let var = tape.scale(sq, 1.0 / n as f64);
    let var_eps = tape.add_scalar(var, 1e-9);
    let inv_std = tape.pow(var_eps, -0.5);
    let normed = tape.mul_col_broadcast(centered, inv_std);
    let scaled = tape.mul_row_broadcast(normed, gain);
    tape.add_row_broadcast(scaled, bias)
}

#[cfg(test)]
pub(crate) fn finite_diff_check(
    build: &mut dyn FnMut(&mut Tape, &[f64]) -> (Var, Vec<Var>),
    params: &mut [f64],
) -> f64 {
    // returns the worst relative error between analytic and central FD
    let mut tape = Tape::new();
    let (loss, leaves) = build(&mut tape, params);
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|&l| tape.grad(l).to_vec()).collect();
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut offset = 0usize;
    for (li, l) in leaves.iter().enumerate() {
        let (r, c) = tape.shape(*l);
        for e in 0..r * c {
            let orig = params[offset + e];
            params[offset + e] = orig + step;
            let mut tp = Tape::new();
            let (lp, _) = build(&mut tp, params);
            let fp = tp.scalar_value(lp);
            params[offset + e] = orig - step;
            let mut tm = Tape::new();
            let (lm, _) = build(&mut tm, params);
            let fm = tm.scalar_value(lm);
            params[offset + e] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[li][e];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-6);
            worst = worst.max(rel);
        }
        offset += r * c;
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_vec(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let mut t = Tape::new();
        let x = t.leaf(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = t.leaf(3, 3, eye);
        let b = t.leaf(1, 3, vec![0.0; 3]);
        let y = linear(&mut t, x, w, b).unwrap();
        assert_eq!(t.data(y), t.data(x));

        let x0 = t.leaf(2, 3, vec![0.0; 6]);
        let b2 = t.leaf(1, 3, vec![0.5, -0.25, 2.0]);
        let y2 = linear(&mut t, x0, w, b2).unwrap();
        assert_eq!(t.data(y2), &[0.5, -0.25, 2.0, 0.5, -0.25, 2.0]);

        let bad = t.leaf(1, 2, vec![0.0; 2]);
        assert!(linear(&mut t, x, w, bad).is_err());
    }

    #[test]
    fn softmax_rows_properties() {
        let mut t = Tape::new();
        let x = t.leaf(1, 4, vec![0.3; 4]);
        let y = softmax_rows(&mut t, x);
        for &v in t.data(y) {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let big = t.leaf(1, 2, vec![1000.0, 0.0]);
        let yb = softmax_rows(&mut t, big);
        assert!(t.data(yb)[0] > 1.0 - 1e-12 && t.data(yb).iter().all(|v| v.is_finite()));

        let mut rng = crate::rng::stream_rng(1, "softmax-test");
        let xr = t.leaf(5, 7, rand_vec(35, &mut rng));
        let yr = softmax_rows(&mut t, xr);
        for i in 0..5 {
            let s: f64 = t.data(yr)[i * 7..(i + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::rng::stream_rng(2, "tensor-fd");
        // a composite expression exercising every op
        let mut params: Vec<f64> = rand_vec(3 * 4 + 4 * 2 + 1 * 2 + 3 * 1 + 1 * 4, &mut rng);
        let worst = finite_diff_check(
            &mut |t, p| {
                let mut off = 0;
                let mut take = |t: &mut Tape, r: usize, c: usize| {
                    let v = t.leaf(r, c, p[off..off + r * c].to_vec());
                    off += r * c;
                    v
                };
                let x = take(t, 3, 4);
                let w = take(t, 4, 2);
                let b = take(t, 1, 2);
                let s = take(t, 3, 1);
                let gain = take(t, 1, 4);
                let leaves = vec![x, w, b, s, gain];

                let ln = {
                    let bias = t.leaf(1, 4, vec![0.01, -0.02, 0.03, 0.0]);
                    layer_norm_rows(t, x, gain, bias)
                };
                let lin = linear(t, ln, w, b).unwrap();
                let act = t.silu(lin);
                let sm = softmax_rows(t, act);
                let scaled = t.mul_col_broadcast(sm, s);
                let tr = t.transpose(scaled);
                let prod = t.matmul(tr, scaled);
                let sl = t.slice_cols(prod, 0, 2);
                let cat = t.concat_cols(&[sl, prod]);
                let gath = t.gather_rows(cat, &[0, 1, 1]);
                let sq = t.mul(gath, gath);
                let sig = t.sigmoid(sq);
                let ab = t.abs(sig);
                let pooled = t.max_pool_rows(ab, 3);
                let rd = t.rows_dot(pooled, pooled);
                let e = t.exp(rd);
                let p3 = t.pow(e, 0.75);
                t.sum_all(p3).pipe(|l| (l, leaves))
            },
            &mut params,
        );
        // deep nonlinear chain: central differences carry visible
        // truncation error, so the bound is looser than the shallow checks
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn matmul_and_broadcast_grads() {
        let mut rng = crate::rng::stream_rng(3, "tensor-fd2");
        let mut params: Vec<f64> = rand_vec(2 * 3 + 3 * 3 + 1 * 3 + 2 * 1, &mut rng);
        let worst = finite_diff_check(
            &mut |t, p| {
                let a = t.leaf(2, 3, p[0..6].to_vec());
                let w = t.leaf(3, 3, p[6..15].to_vec());
                let rb = t.leaf(1, 3, p[15..18].to_vec());
                let cb = t.leaf(2, 1, p[18..20].to_vec());
                let leaves = vec![a, w, rb, cb];
                let m = t.matmul(a, w);
                let r = t.add_row_broadcast(m, rb);
                let r = t.mul_row_broadcast(r, rb);
                let r = t.add_col_broadcast(r, cb);
                let r = t.mul_col_broadcast(r, cb);
                let sub = t.sub(r, m);
                let sc = t.scale(sub, 1.7);
                let asl = t.add_scalar(sc, 0.3);
                (t.sum_all(asl), leaves)
            },
            &mut params,
        );
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    trait Pipe: Sized {
        fn pipe<T>(self, f: impl FnOnce(Self) -> T) -> T {
            f(self)
        }
    }
    impl<T> Pipe for T {}
}
