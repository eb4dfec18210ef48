//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape once in reverse, accumulating adjoints only along paths
//! that reach a trainable leaf.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, bias: Var },
    Scale { a: Var, factor: S },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MaskMul { a: Var, mask: Matrix<S> },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    Im2col { a: Var, steps: usize, batch: usize, kernel: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Matrix<S> },
    SumScalars(Vec<Var>),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix<S>, inv_std: Vec<S>, batch_stats: bool },
}

#[derive(Debug)]
struct Node<S> {
    value: Matrix<S>,
    op: Op<S>,
    needs_grad: bool,
    param: Option<usize>,
}

/// Per-parameter gradients keyed by parameter slot.
#[derive(Debug, Clone, Default)]
pub struct Gradients<S> {
    by_slot: BTreeMap<usize, Matrix<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, slot: usize) -> Option<&Matrix<S>> {
        self.by_slot.get(&slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Matrix<S>)> {
        self.by_slot.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.by_slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_slot.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.by_slot.values().all(Matrix::all_finite)
    }
}

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Reflect an out-of-range index back into `0..len` (mirror without edge repeat).
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: Matrix<S>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(slot);
        v
    }

    pub fn matmul(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let value = Matrix::matmul(self.value(a), ta, self.value(b), tb);
        let ng = self.any(&[a, b]);
        self.push(value, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.any(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.any(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.any(&[a, b]);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Adds a `1 x n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        assert_eq!(b.cols(), self.value(a).cols(), "bias width mismatch");
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for r in 0..value.rows() {
            for (x, &y) in value.row_mut(r).iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        debug_assert_eq!(cols, b.cols());
        let ng = self.any(&[a, bias]);
        self.push(value, Op::AddRow { a, bias }, ng)
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let ng = self.any(&[a]);
        self.push(value, Op::Scale { a, factor }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        let ng = self.any(&[a]);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| S::one() / (S::one() + (-x).exp()));
        let ng = self.any(&[a]);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let ng = self.any(&[a]);
        self.push(value, Op::Tanh(a), ng)
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Matrix<S>) -> Var {
        let value = self.value(a).zip_map(&mask, |x, m| x * m);
        let ng = self.any(&[a]);
        self.push(value, Op::MaskMul { a, mask }, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let value = self.value(a).slice_rows(start, count);
        let ng = self.any(&[a]);
        self.push(value, Op::SliceRows { a, start }, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, count: usize) -> Var {
        let value = self.value(a).slice_cols(start, count);
        let ng = self.any(&[a]);
        self.push(value, Op::SliceCols { a, start }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            assert_eq!(self.value(p).cols(), cols, "concat width mismatch");
            data.extend_from_slice(self.value(p).as_slice());
        }
        let ng = self.any(parts);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Unfolds a time-major `[steps*batch x C]` sequence into
    /// `[steps*batch x C*kernel]` patches with reflect padding.
    /// Column `c*kernel + o` holds channel `c` at offset `o - kernel/2`.
    pub fn im2col_reflect(&mut self, a: Var, steps: usize, batch: usize, kernel: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), steps * batch, "im2col row count mismatch");
        let channels = x.cols();
        let half = (kernel / 2) as isize;
        let mut out = Matrix::zeros(steps * batch, channels * kernel);
        for t in 0..steps {
            for o in 0..kernel {
                let src_t = reflect_index(t as isize + o as isize - half, steps);
                for b in 0..batch {
                    let src = x.row(src_t * batch + b);
                    let dst = out.row_mut(t * batch + b);
                    for (c, &v) in src.iter().enumerate() {
                        dst[c * kernel + o] = v;
                    }
                }
            }
        }
        let ng = self.any(&[a]);
        self.push(out, Op::Im2col { a, steps, batch, kernel }, ng)
    }

    /// Mean softmax cross-entropy over rows; a `1 x 1` result.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "one target per row");
        let mut probs = Matrix::zeros(l.rows(), l.cols());
        let mut total = S::zero();
        for (r, &target) in targets.iter().enumerate() {
            let row = l.row(r);
            let lse = log_sum_exp(row);
            total += lse - row[target];
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let n = S::cast(targets.len().max(1) as f64);
        let ng = self.any(&[logits]);
        self.push(
            Matrix::from_vec(1, 1, vec![total / n]),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            ng,
        )
    }

    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut total = S::zero();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.shape(), (1, 1), "sum_scalars expects 1x1 inputs");
            total += v.get(0, 0);
        }
        let ng = self.any(parts);
        self.push(Matrix::from_vec(1, 1, vec![total]), Op::SumScalars(parts.to_vec()), ng)
    }

    /// Batch normalization over rows. With `running = None` the batch
    /// statistics are used (and returned for running-average updates);
    /// otherwise the supplied mean/variance are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: S,
        running: Option<(&[S], &[S])>,
    ) -> (Var, Vec<S>, Vec<S>) {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let (mean, var) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let nn = S::cast(n as f64);
                let mut mean = vec![S::zero(); d];
                for r in 0..n {
                    for (m, &v) in mean.iter_mut().zip(xv.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nn);
                let mut var = vec![S::zero(); d];
                for r in 0..n {
                    for ((s, &v), &m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= nn);
                (mean, var)
            }
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let xhat = Matrix::from_fn(n, d, |r, c| (xv.get(r, c) - mean[c]) * inv_std[c]);
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let y = Matrix::from_fn(n, d, |r, c| xhat.get(r, c) * g[c] + b[c]);
        let ng = self.any(&[x, gamma, beta]);
        let batch_stats = running.is_none();
        let v = self.push(y, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, ng);
        (v, mean, var)
    }

    /// Gradients of the scalar `loss` for every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoRecordedGraph("loss variable is not on this tape".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward requires a scalar loss".into()));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::NoRecordedGraph("loss does not depend on any trainable parameter".into()));
        }
        let mut grads: Vec<Option<Matrix<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, S::one()));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(slot) = node.param {
                        match out.by_slot.get_mut(&slot) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                out.by_slot.insert(slot, g);
                            }
                        }
                    }
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                    if self.needs_grad(a) {
                        let av = self.value(a);
                        let bv = self.value(b);
                        let acc = slot_for(&mut grads, a, av.shape());
                        if ta {
                            Matrix::gemm_into(bv, tb, &g, true, S::one(), acc);
                        } else {
                            Matrix::gemm_into(&g, false, bv, !tb, S::one(), acc);
                        }
                    }
                    if self.needs_grad(b) {
                        let av = self.value(a);
                        let bv = self.value(b);
                        let acc = slot_for(&mut grads, b, bv.shape());
                        if tb {
                            Matrix::gemm_into(&g, true, av, ta, S::one(), acc);
                        } else {
                            Matrix::gemm_into(av, !ta, &g, false, S::one(), acc);
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, &g, |x| x);
                    self.accumulate(&mut grads, *b, &g, |x| x);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, &g, |x| x);
                    self.accumulate(&mut grads, *b, &g, |x| -x);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs_grad(a) {
                        let d = g.zip_map(self.value(b), |x, y| x * y);
                        add_into(&mut grads, a, d);
                    }
                    if self.needs_grad(b) {
                        let d = g.zip_map(self.value(a), |x, y| x * y);
                        add_into(&mut grads, b, d);
                    }
                }
                Op::AddRow { a, bias } => {
                    self.accumulate(&mut grads, *a, &g, |x| x);
                    if self.needs_grad(*bias) {
                        let mut d = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (s, &v) in d.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *s += v;
                            }
                        }
                        add_into(&mut grads, *bias, d);
                    }
                }
                Op::Scale { a, factor } => {
                    let f = *factor;
                    self.accumulate(&mut grads, *a, &g, |x| x * f);
                }
                Op::Relu(a) => {
                    if self.needs_grad(*a) {
                        let d = g.zip_map(&node.value, |x, y| if y > S::zero() { x } else { S::zero() });
                        add_into(&mut grads, *a, d);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs_grad(*a) {
                        let d = g.zip_map(&node.value, |x, y| x * y * (S::one() - y));
                        add_into(&mut grads, *a, d);
                    }
                }
                Op::Tanh(a) => {
                    if self.needs_grad(*a) {
                        let d = g.zip_map(&node.value, |x, y| x * (S::one() - y * y));
                        add_into(&mut grads, *a, d);
                    }
                }
                Op::MaskMul { a, mask } => {
                    if self.needs_grad(*a) {
                        add_into(&mut grads, *a, g.zip_map(mask, |x, m| x * m));
                    }
                }
                Op::SliceRows { a, start } => {
                    if self.needs_grad(*a) {
                        let shape = self.value(*a).shape();
                        let acc = slot_for(&mut grads, *a, shape);
                        let cols = shape.1;
                        let dst = &mut acc.as_mut_slice()[start * cols..start * cols + g.len()];
                        for (d, &v) in dst.iter_mut().zip(g.as_slice()) {
                            *d += v;
                        }
                    }
                }
                Op::SliceCols { a, start } => {
                    if self.needs_grad(*a) {
                        let shape = self.value(*a).shape();
                        let acc = slot_for(&mut grads, *a, shape);
                        for r in 0..g.rows() {
                            let dst = &mut acc.row_mut(r)[*start..*start + g.cols()];
                            for (d, &v) in dst.iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.value(p).shape();
                        if self.needs_grad(p) {
                            add_into(&mut grads, p, g.slice_rows(offset, shape.0));
                        }
                        offset += shape.0;
                    }
                }
                Op::Im2col { a, steps, batch, kernel } => {
                    if self.needs_grad(*a) {
                        let (steps, batch, kernel) = (*steps, *batch, *kernel);
                        let shape = self.value(*a).shape();
                        let channels = shape.1;
                        let half = (kernel / 2) as isize;
                        let acc = slot_for(&mut grads, *a, shape);
                        for t in 0..steps {
                            for o in 0..kernel {
                                let src_t = reflect_index(t as isize + o as isize - half, steps);
                                for b in 0..batch {
                                    let gr = g.row(t * batch + b);
                                    let dst = acc.row_mut(src_t * batch + b);
                                    for (c, d) in dst.iter_mut().enumerate().take(channels) {
                                        *d += gr[c * kernel + o];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    if self.needs_grad(*logits) {
                        let scale = g.get(0, 0) / S::cast(targets.len().max(1) as f64);
                        let mut d = probs.clone();
                        for (r, &t) in targets.iter().enumerate() {
                            let v = d.get(r, t);
                            d.set(r, t, v - S::one());
                        }
                        d.scale_in_place(scale);
                        add_into(&mut grads, *logits, d);
                    }
                }
                Op::SumScalars(parts) => {
                    for &p in parts {
                        self.accumulate(&mut grads, p, &g, |x| x);
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let (n, d) = g.shape();
                    if self.needs_grad(*beta) {
                        let mut db = Matrix::zeros(1, d);
                        for r in 0..n {
                            for (s, &v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *s += v;
                            }
                        }
                        add_into(&mut grads, *beta, db);
                    }
                    if self.needs_grad(*gamma) {
                        let mut dg = Matrix::zeros(1, d);
                        for r in 0..n {
                            for c in 0..d {
                                let v = dg.get(0, c) + g.get(r, c) * xhat.get(r, c);
                                dg.set(0, c, v);
                            }
                        }
                        add_into(&mut grads, *gamma, dg);
                    }
                    if self.needs_grad(*x) {
                        let gm = self.value(*gamma).as_slice();
                        let dxhat = Matrix::from_fn(n, d, |r, c| g.get(r, c) * gm[c]);
                        let dx = if *batch_stats {
                            let nn = S::cast(n as f64);
                            let mut sum = vec![S::zero(); d];
                            let mut sum_xh = vec![S::zero(); d];
                            for r in 0..n {
                                for c in 0..d {
                                    sum[c] += dxhat.get(r, c);
                                    sum_xh[c] += dxhat.get(r, c) * xhat.get(r, c);
                                }
                            }
                            Matrix::from_fn(n, d, |r, c| {
                                inv_std[c] / nn
                                    * (nn * dxhat.get(r, c) - sum[c] - xhat.get(r, c) * sum_xh[c])
                            })
                        } else {
                            Matrix::from_fn(n, d, |r, c| dxhat.get(r, c) * inv_std[c])
                        };
                        add_into(&mut grads, *x, dx);
                    }
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Matrix<S>>], v: Var, g: &Matrix<S>, f: impl Fn(S) -> S) {
        if !self.needs_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &x) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *a += f(x);
                }
            }
            slot @ None => *slot = Some(g.map(f)),
        }
    }
}

fn slot_for<S: Scalar>(grads: &mut [Option<Matrix<S>>], v: Var, shape: (usize, usize)) -> &mut Matrix<S> {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn add_into<S: Scalar>(grads: &mut [Option<Matrix<S>>], v: Var, d: Matrix<S>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences on a scalar function of one leaf.
    fn numeric_grad(m: &Matrix<f64>, f: &dyn Fn(&Matrix<f64>) -> f64) -> Matrix<f64> {
        let h = 1e-6;
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.len() {
            let mut p = m.clone();
            p.as_mut_slice()[i] += h;
            let mut q = m.clone();
            q.as_mut_slice()[i] -= h;
            out.as_mut_slice()[i] = (f(&p) - f(&q)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-4);
            assert!(rel < tol, "analytic {x} vs numeric {y}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut s = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(-3, 2), 1);
        assert_eq!(reflect_index(4, 1), 0);
    }

    #[test]
    fn matmul_chain_gradient_matches_finite_differences() {
        let a0 = sample(3, 4, 1);
        let b0 = sample(5, 4, 2);
        let targets = [0usize, 4, 2];
        let run = |a: &Matrix<f64>, b: &Matrix<f64>| -> (Tape<f64>, Var) {
            let mut t = Tape::new();
            let av = t.param(0, a.clone());
            let bv = t.param(1, b.clone());
            let m = t.matmul(av, false, bv, true);
            let s = t.tanh(m);
            let loss = t.cross_entropy(s, &targets);
            (t, loss)
        };
        let (tape, loss) = run(&a0, &b0);
        let g = tape.backward(loss).unwrap();
        let na = numeric_grad(&a0, &|a| {
            let (t, l) = run(a, &b0);
            t.value(l).get(0, 0)
        });
        let nb = numeric_grad(&b0, &|b| {
            let (t, l) = run(&a0, b);
            t.value(l).get(0, 0)
        });
        assert_close(g.get(0).unwrap(), &na, 1e-6);
        assert_close(g.get(1).unwrap(), &nb, 1e-6);
    }

    #[test]
    fn batch_norm_and_im2col_gradients_match_finite_differences() {
        let x0 = sample(8, 3, 7);
        let gamma0 = sample(1, 6, 8);
        let beta0 = sample(1, 6, 9);
        let w0 = sample(6, 9, 10);
        let run = |x: &Matrix<f64>, gm: &Matrix<f64>| -> (Tape<f64>, Var) {
            let mut t = Tape::new();
            let xv = t.param(0, x.clone());
            let g = t.param(1, gm.clone());
            let b = t.param(2, beta0.clone());
            let w = t.constant(w0.clone());
            let cols = t.im2col_reflect(xv, 4, 2, 3);
            let h = t.matmul(cols, false, w, true);
            let (bn, _, _) = t.batch_norm(h, g, b, 1e-5, None);
            let s = t.sigmoid(bn);
            let loss = t.cross_entropy(s, &[0, 1, 2, 3, 4, 5, 0, 1]);
            (t, loss)
        };
        let (tape, loss) = run(&x0, &gamma0);
        let g = tape.backward(loss).unwrap();
        let nx = numeric_grad(&x0, &|x| {
            let (t, l) = run(x, &gamma0);
            t.value(l).get(0, 0)
        });
        let ng = numeric_grad(&gamma0, &|gm| {
            let (t, l) = run(&x0, gm);
            t.value(l).get(0, 0)
        });
        assert_close(g.get(0).unwrap(), &nx, 1e-5);
        assert_close(g.get(1).unwrap(), &ng, 1e-5);
    }

    #[test]
    fn backward_without_trainable_path_is_an_error() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Matrix::filled(2, 2, 1.0));
        let l = t.cross_entropy(c, &[0, 1]);
        assert!(matches!(t.backward(l), Err(Error::NoRecordedGraph(_))));
    }
}
