//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Values are computed eagerly as nodes are pushed, so a forward pass can
//! inspect intermediate results (e.g. to make hard top-k selections) before
//! deciding which nodes to build next. `backward` walks the tape once in
//! reverse and returns the gradient of a 1×1 root with respect to every node.

use std::rc::Rc;

use ndarray::{Array2, ArrayView1, Axis, Zip};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(c, v) in row {
                debug_assert!(c < cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self · x`
    pub fn mul(&self, x: &Mat) -> Mat {
        assert_eq!(self.cols, x.nrows(), "sparse product shape");
        let mut out = Mat::zeros((self.rows, x.ncols()));
        for (r, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &x.row(c));
            }
        }
        out
    }

    /// `selfᵀ · x`
    pub fn tmul(&self, x: &Mat) -> Mat {
        assert_eq!(self.rows, x.nrows(), "sparse transpose product shape");
        let mut out = Mat::zeros((self.cols, x.ncols()));
        for r in 0..self.rows {
            let src = x.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &src);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat {
        let mut out = Mat::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }
}

type Idx = Rc<Vec<usize>>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    /// `a + 1·bias` for a 1×c bias row.
    AddBias(Var, Var),
    /// `ca·a + cb·b`
    Lin(Var, f64, Var, f64),
    PRelu(Var, Var),
    Sparse(Rc<SparseMatrix>, Var),
    GatherRows(Var, Idx),
    /// Column vector of row-major flat entries.
    GatherFlat(Var, Idx),
    RowNormalize(Var),
    /// `out[k] = a[left[k]] · b[right[k]]`
    PairDot(Var, Var, Idx, Idx),
    /// `out[src[k]] += w[k] · x[dst[k]]`
    Aggregate {
        w: Var,
        x: Var,
        src: Idx,
        dst: Idx,
    },
    ConcatCols(Vec<Var>),
    /// Elementwise product with a constant (a single row broadcasts).
    MulConst(Var, Rc<Mat>),
    /// Sum with a constant (a single row broadcasts).
    AddConst(Var),
    SumSquares(Var),
    /// `Σ -ln σ(x)`
    NegLogSigmoidSum(Var),
    InfoNce {
        logits: Var,
        targets: Idx,
        inv_tau: f64,
        exclude_positive: bool,
    },
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` if `v` does not
    /// influence the root or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Like `get`, but zeros of the right shape when there is no path.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(tape.value(v).raw_dim()))
    }
}

fn broadcast_mul(a: &Mat, c: &Mat) -> Mat {
    if c.nrows() == 1 && a.nrows() != 1 {
        a * &c.row(0)
    } else {
        a * c
    }
}

fn broadcast_add(a: &Mat, c: &Mat) -> Mat {
    if c.nrows() == 1 && a.nrows() != 1 {
        a + &c.row(0)
    } else {
        a + c
    }
}

fn row_dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// Row-wise log-sum-exp over the columns selected by `keep`.
fn masked_log_softmax(row: ArrayView1<f64>, scale: f64, keep: impl Fn(usize) -> bool) -> (f64, Vec<f64>) {
    let max = row
        .iter()
        .enumerate()
        .filter(|(k, _)| keep(*k))
        .map(|(_, &v)| v * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(k, &v)| if keep(k) { (v * scale - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    let lse = max + total.ln();
    let probs = exps.into_iter().map(|e| e / total).collect();
    (lse, probs)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives gradients.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        assert_eq!(self.value(bias).nrows(), 1, "bias must be a row");
        let v = self.value(a) + &self.value(bias).row(0);
        self.push(v, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn lin(&mut self, a: Var, ca: f64, b: Var, cb: f64) -> Var {
        let mut v = self.value(a) * ca;
        v.scaled_add(cb, self.value(b));
        self.push(v, Op::Lin(a, ca, b, cb), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.lin(a, 1.0, b, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.lin(a, 1.0, b, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.lin(a, c, a, 0.0)
    }

    /// Parametric ReLU with a learnable 1×1 slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Var {
        let s = self.scalar(slope);
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { s * x });
        self.push(v, Op::PRelu(a, slope), &[a, slope])
    }

    pub fn sparse_mul(&mut self, m: Rc<SparseMatrix>, a: Var) -> Var {
        let v = m.mul(self.value(a));
        self.push(v, Op::Sparse(m, a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut v = Mat::zeros((idx.len(), src.ncols()));
        for (k, &r) in idx.iter().enumerate() {
            v.row_mut(k).assign(&src.row(r));
        }
        self.push(v, Op::GatherRows(a, Rc::new(idx)), &[a])
    }

    pub fn gather_flat(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let cols = src.ncols();
        let v = Mat::from_shape_fn((idx.len(), 1), |(k, _)| src[[idx[k] / cols, idx[k] % cols]]);
        self.push(v, Op::GatherFlat(a, Rc::new(idx)), &[a])
    }

    /// Rows scaled to unit norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
        self.push(v, Op::RowNormalize(a), &[a])
    }

    pub fn pair_dot(&mut self, a: Var, b: Var, left: Vec<usize>, right: Vec<usize>) -> Var {
        assert_eq!(left.len(), right.len());
        let (va, vb) = (self.value(a), self.value(b));
        let v = Mat::from_shape_fn((left.len(), 1), |(k, _)| {
            row_dot(va.row(left[k]), vb.row(right[k]))
        });
        self.push(v, Op::PairDot(a, b, Rc::new(left), Rc::new(right)), &[a, b])
    }

    /// `out` has `rows` rows; row `src[k]` accumulates `w[k] · x[dst[k]]`.
    pub fn aggregate(&mut self, w: Var, x: Var, src: Vec<usize>, dst: Vec<usize>, rows: usize) -> Var {
        assert_eq!(src.len(), dst.len());
        let (vw, vx) = (self.value(w), self.value(x));
        assert_eq!(vw.nrows(), src.len());
        let mut v = Mat::zeros((rows, vx.ncols()));
        for k in 0..src.len() {
            v.row_mut(src[k]).scaled_add(vw[[k, 0]], &vx.row(dst[k]));
        }
        let op = Op::Aggregate {
            w,
            x,
            src: Rc::new(src),
            dst: Rc::new(dst),
        };
        self.push(v, op, &[w, x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = broadcast_mul(self.value(a), &c);
        self.push(v, Op::MulConst(a, Rc::new(c)), &[a])
    }

    pub fn add_const(&mut self, a: Var, c: Mat) -> Var {
        let v = broadcast_add(self.value(a), &c);
        self.push(v, Op::AddConst(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x * x).sum();
        self.push(Mat::from_elem((1, 1), s), Op::SumSquares(a), &[a])
    }

    /// `Σ -ln σ(x)` over all entries.
    pub fn neg_log_sigmoid_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|&x| softplus(-x)).sum();
        self.push(Mat::from_elem((1, 1), s), Op::NegLogSigmoidSum(a), &[a])
    }

    /// Summed InfoNCE over rows of `logits` (cosines), with the positive
    /// column `targets[r]`. With `exclude_positive` the denominator runs over
    /// the other columns only.
    pub fn info_nce(&mut self, logits: Var, targets: Vec<usize>, tau: f64, exclude_positive: bool) -> Var {
        let inv_tau = 1.0 / tau;
        let l = self.value(logits);
        assert_eq!(l.nrows(), targets.len());
        let mut total = 0.0;
        for (r, row) in l.axis_iter(Axis(0)).enumerate() {
            let j = targets[r];
            let (lse, _) = masked_log_softmax(row, inv_tau, |k| !exclude_positive || k != j);
            total += lse - row[j] * inv_tau;
        }
        let op = Op::InfoNce {
            logits,
            targets: Rc::new(targets),
            inv_tau,
            exclude_positive,
        };
        self.push(Mat::from_elem((1, 1), total), op, &[logits])
    }

    /// Gradients of the 1×1 node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.needs_grad {
                *g = None;
            }
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Mat>], v: Var, f: impl FnOnce(&mut Mat)) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Mat::zeros(self.value(v).raw_dim()));
        f(slot);
    }

    fn propagate(&self, op: &Op, out: &Mat, g: &Mat, grads: &mut [Option<Mat>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*bias) {
                    self.accumulate(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Lin(a, ca, b, cb) => {
                if *ca != 0.0 {
                    self.accumulate(grads, *a, g * *ca);
                }
                if *cb != 0.0 {
                    self.accumulate(grads, *b, g * *cb);
                }
            }
            Op::PRelu(a, slope) => {
                let s = self.scalar(*slope);
                let x = self.value(*a);
                if self.needs(*a) {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(x).for_each(|gv, &xv| {
                        if xv <= 0.0 {
                            *gv *= s;
                        }
                    });
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*slope) {
                    let mut gs = 0.0;
                    Zip::from(g).and(x).for_each(|&gv, &xv| {
                        if xv <= 0.0 {
                            gs += gv * xv;
                        }
                    });
                    self.accumulate(grads, *slope, Mat::from_elem((1, 1), gs));
                }
            }
            Op::Sparse(m, a) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, m.tmul(g));
                }
            }
            Op::GatherRows(a, idx) => {
                self.accumulate_with(grads, *a, |acc| {
                    for (k, &r) in idx.iter().enumerate() {
                        acc.row_mut(r).scaled_add(1.0, &g.row(k));
                    }
                });
            }
            Op::GatherFlat(a, idx) => {
                let cols = self.value(*a).ncols();
                self.accumulate_with(grads, *a, |acc| {
                    for (k, &f) in idx.iter().enumerate() {
                        acc[[f / cols, f % cols]] += g[[k, 0]];
                    }
                });
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                self.accumulate_with(grads, *a, |acc| {
                    for r in 0..x.nrows() {
                        let norm = x.row(r).dot(&x.row(r)).sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let y = out.row(r);
                        let gy = g.row(r);
                        let proj = y.dot(&gy);
                        let mut dst = acc.row_mut(r);
                        Zip::from(&mut dst)
                            .and(&gy)
                            .and(&y)
                            .for_each(|d, &gv, &yv| *d += (gv - yv * proj) / norm);
                    }
                });
            }
            Op::PairDot(a, b, left, right) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |acc| {
                    for k in 0..left.len() {
                        acc.row_mut(left[k]).scaled_add(g[[k, 0]], &vb.row(right[k]));
                    }
                });
                self.accumulate_with(grads, *b, |acc| {
                    for k in 0..left.len() {
                        acc.row_mut(right[k]).scaled_add(g[[k, 0]], &va.row(left[k]));
                    }
                });
            }
            Op::Aggregate { w, x, src, dst } => {
                let (vw, vx) = (self.value(*w), self.value(*x));
                self.accumulate_with(grads, *w, |acc| {
                    for k in 0..src.len() {
                        acc[[k, 0]] += row_dot(g.row(src[k]), vx.row(dst[k]));
                    }
                });
                self.accumulate_with(grads, *x, |acc| {
                    for k in 0..src.len() {
                        acc.row_mut(dst[k]).scaled_add(vw[[k, 0]], &g.row(src[k]));
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let width = self.value(*p).ncols();
                    if self.needs(*p) {
                        let slice = g.slice(ndarray::s![.., start..start + width]).to_owned();
                        self.accumulate(grads, *p, slice);
                    }
                    start += width;
                }
            }
            Op::MulConst(a, c) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, broadcast_mul(g, c));
                }
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::SumSquares(a) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, self.value(*a) * (2.0 * g[[0, 0]]));
                }
            }
            Op::NegLogSigmoidSum(a) => {
                if self.needs(*a) {
                    let s = g[[0, 0]];
                    self.accumulate(grads, *a, self.value(*a).mapv(|x| -s * sigmoid(-x)));
                }
            }
            Op::InfoNce {
                logits,
                targets,
                inv_tau,
                exclude_positive,
            } => {
                if !self.needs(*logits) {
                    return;
                }
                let s = g[[0, 0]];
                let l = self.value(*logits);
                let mut gl = Mat::zeros(l.raw_dim());
                for (r, row) in l.axis_iter(Axis(0)).enumerate() {
                    let j = targets[r];
                    let (_, probs) =
                        masked_log_softmax(row, *inv_tau, |k| !*exclude_positive || k != j);
                    for (k, p) in probs.into_iter().enumerate() {
                        gl[[r, k]] = s * p * inv_tau;
                    }
                    gl[[r, j]] -= s * inv_tau;
                }
                self.accumulate(grads, *logits, gl);
            }
        }
    }
}
