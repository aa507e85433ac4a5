//! Dense row-major matrices and a small reverse-mode autodiff tape.
//!
//! Every network in this crate is expressed as a sequence of 2-D operations
//! recorded on a [`Tape`]. Sequences of length `L` over a batch of `B`
//! examples are laid out as `(B * L) x D` matrices with row `b * L + t`
//! holding position `t` of example `b`.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn column(data: Vec<f64>) -> Self {
        let rows = data.len();
        Self::from_vec(rows, 1, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(self, false, other, false, &mut out, 0.0);
        out
    }
}

/// `out = op(a) * op(b) + beta * out` where `op` optionally transposes.
fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool, out: &mut Matrix, beta: f64) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2);
    assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and dimensions describe exactly the owned buffers above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
        frozen_row: Option<usize>,
    },
    ScaleRows(Var, Var),
    Reshape(Var),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Unfold {
        x: Var,
        seq_len: usize,
        width: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    MaskedSoftmax(Var),
    Reverse(Var, f64),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Option<Vec<f64>>,
        probs: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
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

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Trainable (or otherwise differentiated) leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// Adds a `1 x cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1);
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(value, Op::AddRow(a, bias), ng)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        Matrix::from_vec(
            av.rows(),
            av.cols(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, factor), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// Row lookup: output row `i` is `table[ids[i]]`. `frozen_row` never
    /// receives gradient.
    pub fn gather(&mut self, table: Var, ids: &[usize], frozen_row: Option<usize>) -> Var {
        let tv = self.value(table);
        let mut value = Matrix::zeros(ids.len(), tv.cols());
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).copy_from_slice(tv.row(id));
        }
        let ng = self.ng(table);
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                frozen_row,
            },
            ng,
        )
    }

    /// Multiplies row `r` of `x` by the scalar `s[r, 0]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(sv.shape(), (xv.rows(), 1), "row-scale shape mismatch");
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let k = sv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        let ng = self.ng(x) || self.ng(s);
        self.push(value, Op::ScaleRows(x, s), ng)
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        let value = Matrix::from_vec(rows, cols, av.data().to_vec());
        let ng = self.ng(a);
        self.push(value, Op::Reshape(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols());
        let mut value = Matrix::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            value.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let av = self.value(a);
        let mut value = Matrix::zeros(rows.len(), av.cols());
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).copy_from_slice(av.row(r));
        }
        let ng = self.ng(a);
        self.push(value, Op::SelectRows(a, rows.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Convolution windows over a `(batch * seq_len) x dim` sequence.
    ///
    /// Output row `b * seq_len + t` concatenates positions `t .. t + width`
    /// of example `b`; positions at or past `seq_len` read as zero vectors.
    pub fn unfold(&mut self, x: Var, seq_len: usize, width: usize) -> Var {
        let xv = self.value(x);
        let dim = xv.cols();
        assert_eq!(xv.rows() % seq_len, 0);
        let batch = xv.rows() / seq_len;
        let mut value = Matrix::zeros(xv.rows(), width * dim);
        for b in 0..batch {
            for t in 0..seq_len {
                let out = value.row_mut(b * seq_len + t);
                for j in 0..width.min(seq_len - t) {
                    out[j * dim..(j + 1) * dim].copy_from_slice(xv.row(b * seq_len + t + j));
                }
            }
        }
        let ng = self.ng(x);
        self.push(value, Op::Unfold { x, seq_len, width }, ng)
    }

    /// Per-example max over window rows `t < max(lengths[b], 1)`.
    pub fn masked_max_pool(&mut self, x: Var, seq_len: usize, lengths: &[usize]) -> Var {
        let xv = self.value(x);
        let batch = lengths.len();
        assert_eq!(xv.rows(), batch * seq_len);
        let cols = xv.cols();
        let mut value = Matrix::zeros(batch, cols);
        let mut argmax = vec![0usize; batch * cols];
        for (b, &len) in lengths.iter().enumerate() {
            let windows = len.clamp(1, seq_len);
            for c in 0..cols {
                let mut best_row = b * seq_len;
                let mut best = xv.get(best_row, c);
                for t in 1..windows {
                    let r = b * seq_len + t;
                    let v = xv.get(r, c);
                    if v > best {
                        best = v;
                        best_row = r;
                    }
                }
                value.set(b, c, best);
                argmax[b * cols + c] = best_row;
            }
        }
        let ng = self.ng(x);
        self.push(value, Op::MaxPool { x, argmax }, ng)
    }

    /// Row-wise softmax over the first `lengths[r]` columns; the remaining
    /// columns are exactly zero (a row with length 0 is all zeros).
    pub fn masked_softmax(&mut self, x: Var, lengths: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), lengths.len());
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        for (r, &len) in lengths.iter().enumerate() {
            let len = len.min(xv.cols());
            if len == 0 {
                continue;
            }
            let row = &xv.row(r)[..len];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = value.row_mut(r);
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            out[..len].iter_mut().for_each(|o| *o /= total);
        }
        let ng = self.ng(x);
        self.push(value, Op::MaskedSoftmax(x), ng)
    }

    /// Gradient reversal: identity forward, multiplies gradients by
    /// `-lambda` on the way back.
    pub fn reverse_gradient(&mut self, x: Var, lambda: f64) -> Var {
        let value = self.value(x).clone();
        let ng = self.ng(x);
        self.push(value, Op::Reverse(x, lambda), ng)
    }

    /// Mean over the batch of `weight_i * -log softmax(logits_i)[target_i]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: Option<&[f64]>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "target count mismatch");
        if let Some(w) = weights {
            assert_eq!(w.len(), targets.len(), "weight count mismatch");
        }
        let probs = softmax_rows(lv);
        let n = targets.len().max(1) as f64;
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let w = weights.map_or(1.0, |w| w[i]);
            loss += w * (lse - row[t]);
        }
        let value = Matrix::from_vec(1, 1, vec![loss / n]);
        let ng = self.ng(logits);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(|w| w.to_vec()),
                probs,
            },
            ng,
        )
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Back-propagates from the scalar `root`, replacing any previous gradients.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, delta: Matrix| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut da, 0.0);
                    acc(*a, da);
                }
                if self.ng(*b) {
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::AddRow(a, bias) => {
                if self.ng(*bias) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*bias, db);
                }
                acc(*a, g.clone());
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
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, hadamard(g, bv));
                }
                if self.ng(*b) {
                    acc(*b, hadamard(g, av));
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Gather {
                table,
                ids,
                frozen_row,
            } => {
                let tv = self.value(*table);
                let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    if Some(id) == *frozen_row {
                        continue;
                    }
                    for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*table, dt);
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                if self.ng(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let k = sv.get(r, 0);
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    acc(*x, dx);
                }
                if self.ng(*s) {
                    let ds: Vec<f64> = (0..xv.rows())
                        .map(|r| xv.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*s, Matrix::column(ds));
                }
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                acc(*a, Matrix::from_vec(av.rows(), av.cols(), g.data().to_vec()));
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut da = Matrix::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, da);
            }
            Op::SelectRows(a, rows) => {
                let av = self.value(*a);
                let mut da = Matrix::zeros(av.rows(), av.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for (d, v) in da.row_mut(r).iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                acc(*a, da);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.ng(p) {
                        let mut dp = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        acc(p, dp);
                    }
                    offset += cols;
                }
            }
            Op::Unfold { x, seq_len, width } => {
                let xv = self.value(*x);
                let dim = xv.cols();
                let batch = xv.rows() / seq_len;
                let mut dx = Matrix::zeros(xv.rows(), dim);
                for b in 0..batch {
                    for t in 0..*seq_len {
                        let gr = g.row(b * seq_len + t);
                        for j in 0..(*width).min(seq_len - t) {
                            let target = dx.row_mut(b * seq_len + t + j);
                            for (d, v) in target.iter_mut().zip(&gr[j * dim..(j + 1) * dim]) {
                                *d += v;
                            }
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::MaxPool { x, argmax } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut dx = Matrix::zeros(xv.rows(), cols);
                for b in 0..g.rows() {
                    for c in 0..cols {
                        let r = argmax[b * cols + c];
                        let cur = dx.get(r, c);
                        dx.set(r, c, cur + g.get(b, c));
                    }
                }
                acc(*x, dx);
            }
            Op::MaskedSoftmax(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (d, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Reverse(x, lambda) => acc(*x, g.map(|v| -lambda * v)),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let n = targets.len().max(1) as f64;
                let upstream = g.get(0, 0);
                let mut dl = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    let w = weights.as_ref().map_or(1.0, |w| w[i]);
                    let row = dl.row_mut(i);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= upstream * w / n);
                }
                acc(*logits, dl);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(r);
        let mut total = 0.0;
        for (v, x) in o.iter_mut().zip(row) {
            *v = (x - max).exp();
            total += *v;
        }
        o.iter_mut().for_each(|v| *v /= total);
    }
    out
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random(rows: usize, cols: usize, seed: &mut u64) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| lcg(seed)).collect())
    }

    /// Checks d(loss)/d(input) from the tape against central differences.
    fn check(input: Matrix, build: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.param(input.clone());
        let loss = build(&mut tape, x);
        tape.backward(loss);
        let analytic = tape.grad(x).cloned().unwrap_or(Matrix::zeros(input.rows(), input.cols()));
        let h = 1e-6;
        for i in 0..input.data().len() {
            let eval = |delta: f64| {
                let mut m = input.clone();
                m.data_mut()[i] += delta;
                let mut t = Tape::new();
                let x = t.param(m);
                let l = build(&mut t, x);
                t.value(l).get(0, 0)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-4));
            assert!(err < 1e-4, "index {i}: analytic {a} vs numeric {numeric}");
        }
    }

    fn to_scalar(t: &mut Tape, v: Var) -> Var {
        // Weighted sum through a fixed matrix so every entry matters.
        let (r, c) = t.value(v).shape();
        let mut seed = 99;
        let w = t.constant(random(c, 2, &mut seed));
        let y = t.matmul(v, w);
        let targets: Vec<usize> = (0..r).map(|i| i % 2).collect();
        t.cross_entropy(y, &targets, None)
    }

    #[test]
    fn matmul_matches_naive() {
        let mut seed = 1;
        let a = random(3, 4, &mut seed);
        let b = random(4, 2, &mut seed);
        let c = a.matmul(&b);
        for i in 0..3 {
            for j in 0..2 {
                let naive: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((c.get(i, j) - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn elementwise_gradients() {
        let mut seed = 7;
        let input = random(4, 3, &mut seed);
        let other = random(4, 3, &mut seed);
        check(input, |t, x| {
            let o = t.constant(other.clone());
            let a = t.sigmoid(x);
            let b = t.tanh(x);
            let c = t.mul(a, b);
            let d = t.sub(c, o);
            let e = t.relu(d);
            let f = t.add(e, x);
            let g = t.scale(f, 0.7);
            to_scalar(t, g)
        });
    }

    #[test]
    fn structural_gradients() {
        let mut seed = 11;
        let input = random(6, 3, &mut seed);
        let bias = random(1, 5, &mut seed);
        check(input, |t, x| {
            let u = t.unfold(x, 3, 2);
            let w = t.constant(Matrix::from_vec(6, 5, (0..30).map(|i| (i as f64 * 0.37).sin()).collect()));
            let h = t.matmul(u, w);
            let b = t.param(bias.clone());
            let h = t.add_row(h, b);
            let p = t.masked_max_pool(h, 3, &[3, 2]);
            let s = t.slice_cols(p, 1, 4);
            let sel = t.select_rows(x, &[0, 4]);
            let c = t.concat_cols(&[s, sel]);
            to_scalar(t, c)
        });
    }

    #[test]
    fn softmax_and_row_scale_gradients() {
        let mut seed = 5;
        let input = random(2, 4, &mut seed);
        let emb = random(8, 3, &mut seed);
        check(input, |t, x| {
            let s = t.masked_softmax(x, &[4, 2]);
            let col = t.reshape(s, 8, 1);
            let e = t.constant(emb.clone());
            let xs = t.scale_rows(e, col);
            to_scalar(t, xs)
        });
    }

    #[test]
    fn gather_skips_frozen_row() {
        let mut tape = Tape::new();
        let table = tape.param(Matrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]));
        let rows = tape.gather(table, &[0, 1, 1, 2], Some(0));
        let mut seed = 3;
        let loss = to_scalar(&mut tape, rows);
        let _ = &mut seed;
        tape.backward(loss);
        let g = tape.grad(table).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert!(g.row(1).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn reversal_is_identity_forward_and_negates_backward() {
        let mut seed = 21;
        let input = random(3, 2, &mut seed);
        let lambda = 1.7;
        let mut plain = Tape::new();
        let xp = plain.param(input.clone());
        let lp = to_scalar(&mut plain, xp);
        plain.backward(lp);

        let mut rev = Tape::new();
        let xr = rev.param(input.clone());
        let r = rev.reverse_gradient(xr, lambda);
        assert_eq!(rev.value(r), &input);
        let lr = to_scalar(&mut rev, r);
        rev.backward(lr);
        for (a, b) in rev.grad(xr).unwrap().data().iter().zip(plain.grad(xp).unwrap().data()) {
            assert_eq!(*a, -lambda * b);
        }
    }

    #[test]
    fn masked_softmax_zeroes_tail() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_vec(3, 3, vec![1.0, 2.0, 3.0, 0.5, 9.0, 9.0, 1.0, 1.0, 1.0]));
        let s = tape.masked_softmax(x, &[3, 1, 0]);
        let v = tape.value(s);
        assert!((v.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(v.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(2), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn weighted_cross_entropy_scales_terms() {
        let logits = Matrix::from_vec(2, 2, vec![0.3, -0.2, 1.0, 0.1]);
        let mut t = Tape::new();
        let l = t.constant(logits.clone());
        let plain = t.cross_entropy(l, &[0, 1], None);
        let weighted = t.cross_entropy(l, &[0, 1], Some(&[2.0, 2.0]));
        assert!((t.value(weighted).get(0, 0) - 2.0 * t.value(plain).get(0, 0)).abs() < 1e-12);
    }
}
