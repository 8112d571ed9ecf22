//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value, and [`Graph::backward`] walks the tape in reverse accumulating
//! gradients. Parameter leaves borrow their values from a [`ParamStore`], so
//! building a graph never copies weights.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    SoftmaxRows(usize),
    Sum(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Transpose(usize),
    Gather(usize, Vec<usize>),
    ShiftStack {
        src: usize,
        kernel: usize,
        left: usize,
    },
    Normalize(usize),
    UpsampleRows {
        src: usize,
        factor: usize,
    },
    L1Loss(usize, Tensor),
    BceWithLogits {
        src: usize,
        targets: Vec<f64>,
        pos_weight: f64,
    },
    CrossEntropy(usize, Vec<usize>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.len(), 1);
        t.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &Tensor {
        self.value(Var(i))
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies the current value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a.0).matmul(self.val(b.0));
        self.push(out, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a.0), self.val(b.0));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Add(a.0, b.0))
    }

    /// Adds a `1×C` row to every row of an `R×C` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.val(a.0), self.val(row.0));
        assert_eq!(r.rows(), 1, "add_row expects a row vector");
        assert_eq!(x.cols(), r.cols(), "add_row width mismatch");
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a.0, row.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a.0), self.val(b.0));
        assert_eq!(x.shape(), y.shape(), "sub shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a.0), self.val(b.0));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.val(a.0).map(|x| x * k);
        self.push(out, Op::Scale(a.0, k))
    }

    /// Multiplies every entry of `a` by the `1×1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.val(a.0).map(|x| x * k);
        self.push(out, Op::ScaleBy(a.0, s.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(sigmoid);
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.val(a.0);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a.0).sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::Sum(a.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.val(parts[0].0).rows();
        let cols: usize = parts.iter().map(|p| self.val(p.0).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let t = self.val(p.0);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.val(parts[0].0).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.val(p.0);
            assert_eq!(t.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data);
        self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.val(a.0);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a.0, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.val(a.0);
        assert!(start + len <= x.rows(), "slice_rows out of range");
        let c = x.cols();
        let out = Tensor::from_vec(len, c, x.data()[start * c..(start + len) * c].to_vec());
        self.push(out, Op::SliceRows(a.0, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.val(a.0).transpose();
        self.push(out, Op::Transpose(a.0))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = self.val(table.0);
        let mut out = Tensor::zeros(indices.len(), t.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(out, Op::Gather(table.0, indices.to_vec()))
    }

    /// Stacks `kernel` time-shifted copies of an `R×C` matrix side by side
    /// (zero padded), turning a 1-D convolution along rows into a matmul.
    pub fn shift_stack(&mut self, a: Var, kernel: usize, left: usize) -> Var {
        let x = self.val(a.0);
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(rows, kernel * cols);
        for t in 0..rows {
            for j in 0..kernel {
                let src = t as isize + j as isize - left as isize;
                if src >= 0 && (src as usize) < rows {
                    out.row_mut(t)[j * cols..(j + 1) * cols].copy_from_slice(x.row(src as usize));
                }
            }
        }
        self.push(out, Op::ShiftStack { src: a.0, kernel, left })
    }

    /// `a / ‖a‖₂` over all entries.
    pub fn normalize(&mut self, a: Var) -> Var {
        let x = self.val(a.0);
        let n = x.norm().max(1e-12);
        let out = x.map(|v| v / n);
        self.push(out, Op::Normalize(a.0))
    }

    /// Linear interpolation of rows by an integer factor; output row `n` samples
    /// input position `(n + 0.5) / factor - 0.5`, clamped to the valid range.
    pub fn upsample_rows(&mut self, a: Var, factor: usize) -> Var {
        let x = self.val(a.0);
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(rows * factor, cols);
        for n in 0..rows * factor {
            let (i0, i1, w) = upsample_taps(n, factor, rows);
            let (r0, r1) = (x.row(i0), x.row(i1));
            for (c, o) in out.row_mut(n).iter_mut().enumerate() {
                *o = (1.0 - w) * r0[c] + w * r1[c];
            }
        }
        self.push(out, Op::UpsampleRows { src: a.0, factor })
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: Tensor) -> Var {
        let x = self.val(pred.0);
        assert_eq!(x.shape(), target.shape(), "l1 target shape mismatch");
        let s: f64 = x.data().iter().zip(target.data()).map(|(p, t)| (p - t).abs()).sum();
        let out = Tensor::from_vec(1, 1, vec![s / x.len() as f64]);
        self.push(out, Op::L1Loss(pred.0, target))
    }

    /// Mean binary cross-entropy on logits with positive-class weight.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], pos_weight: f64) -> Var {
        let x = self.val(logits.0);
        assert_eq!(x.len(), targets.len(), "bce target length mismatch");
        let mut s = 0.0;
        for (&z, &y) in x.data().iter().zip(targets) {
            // -[w y log σ(z) + (1-y) log(1-σ(z))]
            s += pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z);
        }
        let out = Tensor::from_vec(1, 1, vec![s / targets.len() as f64]);
        self.push(
            out,
            Op::BceWithLogits {
                src: logits.0,
                targets: targets.to_vec(),
                pos_weight,
            },
        )
    }

    /// Mean softmax cross-entropy of each row against a class index.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.val(logits.0);
        assert_eq!(x.rows(), targets.len(), "cross-entropy target count mismatch");
        let mut s = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = x.row(r);
            s += log_sum_exp(row) - row[t];
        }
        let out = Tensor::from_vec(1, 1, vec![s / targets.len() as f64]);
        self.push(out, Op::CrossEntropy(logits.0, targets.to_vec()))
    }

    /// Back-propagates from the scalar `loss` and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));
        let mut out = Gradients::new(self.params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (x, y) = (self.val(*a), self.val(*b));
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    gemm(&g, false, y, true, &mut ga, 0.0);
                    let mut gb = Tensor::zeros(y.rows(), y.cols());
                    gemm(x, true, &g, false, &mut gb, 0.0);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, r) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for row in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(row)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *r, gr);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.val(*b), |d, y| d * y);
                    let gb = zip_map(&g, self.val(*a), |d, x| d * x);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.map(|v| v * k)),
                Op::ScaleBy(a, s) => {
                    let k = self.val(*s).data()[0];
                    let ds: f64 = g.data().iter().zip(self.val(*a).data()).map(|(d, x)| d * x).sum();
                    acc(&mut grads, *a, g.map(|v| v * k));
                    acc(&mut grads, *s, Tensor::from_vec(1, 1, vec![ds]));
                }
                Op::Sigmoid(a) => {
                    let y = self.val(i);
                    acc(&mut grads, *a, zip_map(&g, y, |d, s| d * s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = self.val(i);
                    acc(&mut grads, *a, zip_map(&g, y, |d, t| d * (1.0 - t * t)));
                }
                Op::Relu(a) => {
                    let x = self.val(*a);
                    acc(&mut grads, *a, zip_map(&g, x, |d, v| if v > 0.0 { d } else { 0.0 }));
                }
                Op::SoftmaxRows(a) => {
                    let y = self.val(i);
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.val(*a).shape();
                    acc(&mut grads, *a, Tensor::filled(r, c, g.data()[0]));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.val(p).shape();
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.val(p).shape();
                        let gp = Tensor::from_vec(rows, cols, g.data()[offset * cols..(offset + rows) * cols].to_vec());
                        offset += rows;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.val(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let (rows, cols) = self.val(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    ga.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Gather(table, indices) => {
                    let (rows, cols) = self.val(*table).shape();
                    let mut gt = Tensor::zeros(rows, cols);
                    for (r, &idx) in indices.iter().enumerate() {
                        for (o, v) in gt.row_mut(idx).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::ShiftStack { src, kernel, left } => {
                    let (rows, cols) = self.val(*src).shape();
                    let mut gs = Tensor::zeros(rows, cols);
                    for t in 0..rows {
                        for j in 0..*kernel {
                            let s = t as isize + j as isize - *left as isize;
                            if s >= 0 && (s as usize) < rows {
                                let grow = &g.row(t)[j * cols..(j + 1) * cols];
                                for (o, v) in gs.row_mut(s as usize).iter_mut().zip(grow) {
                                    *o += v;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *src, gs);
                }
                Op::Normalize(a) => {
                    let x = self.val(*a);
                    let y = self.val(i);
                    let n = x.norm().max(1e-12);
                    let dot: f64 = y.data().iter().zip(g.data()).map(|(p, q)| p * q).sum();
                    acc(&mut grads, *a, zip_map(&g, y, |d, yv| (d - yv * dot) / n));
                }
                Op::UpsampleRows { src, factor } => {
                    let (rows, cols) = self.val(*src).shape();
                    let mut gs = Tensor::zeros(rows, cols);
                    for n in 0..rows * factor {
                        let (i0, i1, w) = upsample_taps(n, *factor, rows);
                        let grow = g.row(n).to_vec();
                        for (c, v) in grow.iter().enumerate() {
                            gs.row_mut(i0)[c] += (1.0 - w) * v;
                            gs.row_mut(i1)[c] += w * v;
                        }
                    }
                    acc(&mut grads, *src, gs);
                }
                Op::L1Loss(a, target) => {
                    let x = self.val(*a);
                    let k = g.data()[0] / x.len() as f64;
                    let ga = zip_map(x, target, |p, t| k * sign(p - t));
                    acc(&mut grads, *a, ga);
                }
                Op::BceWithLogits {
                    src,
                    targets,
                    pos_weight,
                } => {
                    let x = self.val(*src);
                    let k = g.data()[0] / targets.len() as f64;
                    let data = x
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&z, &y)| {
                            let s = sigmoid(z);
                            k * (pos_weight * y * (s - 1.0) + (1.0 - y) * s)
                        })
                        .collect();
                    acc(&mut grads, *src, Tensor::from_vec(x.rows(), x.cols(), data));
                }
                Op::CrossEntropy(a, targets) => {
                    let x = self.val(*a);
                    let k = g.data()[0] / targets.len() as f64;
                    let mut ga = x.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = ga.row_mut(r);
                        softmax_in_place(row);
                        row[t] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= k;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn upsample_taps(n: usize, factor: usize, rows: usize) -> (usize, usize, f64) {
    let pos = ((n as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (rows - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(rows - 1);
    (i0, i1, pos - i0 as f64)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
