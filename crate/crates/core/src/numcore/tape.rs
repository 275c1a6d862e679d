//! Reverse-mode differentiation over a recording tape.
//!
//! Every primitive appends a node holding its forward value; nodes only ever
//! reference earlier nodes, so walking the tape backwards is a reverse
//! topological order and each node is visited once.

use super::linalg::svd;
use super::tensor::{matmul_into, Tensor};
use crate::error::{ensure, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Singular values closer than this (relative) share their gradient.
pub const SV_TIE_TOL: f64 = 1e-9;
pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { src: Var, start: usize },
    ConcatRows(Vec<Var>),
    Softmax(Var),
    LayerNorm { src: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var),
    Mean(Var),
    ColVariance(Var),
    NormalizeRows { src: Var, norms: Vec<f64> },
    SingularValues { src: Var, u: Tensor, v: Tensor },
    Entropy(Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
    ReplaceRows { src: Var, rows: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    /// Cached auxiliary forward result (softmax probabilities for cross-entropy).
    aux: Option<Tensor>,
}

/// Recording tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant (no gradient flows into it).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// `a (r×c) + bias` broadcast over rows; `bias` holds `c` values.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let c = x.cols();
        ensure!(b.len() == c, Shape, "row bias of {} for {} columns", b.len(), c);
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias), &[a, bias]))
    }

    /// `a (r×c) * gain` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, gain: Var) -> Result<Var> {
        let (x, g) = (self.value(a), self.value(gain));
        let c = x.cols();
        ensure!(g.len() == c, Shape, "row gain of {} for {} columns", g.len(), c);
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, gv) in out.row_mut(i).iter_mut().zip(g.data()) {
                *o *= gv;
            }
        }
        Ok(self.push(out, Op::MulRow(a, gain), &[a, gain]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let r = t.rows();
        ensure!(
            ids.iter().all(|&i| i < r),
            Input,
            "gather index out of range for {} rows",
            r
        );
        let out = t.select_rows(ids);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(src);
        ensure!(start < end && end <= t.cols(), Shape, "column slice {start}..{end} of {}", t.cols());
        let out = t.col_range(start, end);
        Ok(self.push(out, Op::SliceCols { src, start }, &[src]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Shape, "empty concat");
        let r = self.value(parts[0]).rows();
        ensure!(
            parts.iter().all(|p| self.value(*p).rows() == r),
            Shape,
            "concat_cols row mismatch"
        );
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let out = Tensor::matrix(r, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(src);
        ensure!(start < end && end <= t.rows(), Shape, "row slice {start}..{end} of {}", t.rows());
        let out = t.row_range(start, end);
        Ok(self.push(out, Op::SliceRows { src, start }, &[src]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Shape, "empty concat");
        let c = self.value(parts[0]).cols();
        ensure!(
            parts.iter().all(|p| self.value(*p).cols() == c),
            Shape,
            "concat_rows column mismatch"
        );
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, c, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Row-wise softmax; with `causal`, entry `(i, j)` for `j > i` is masked to zero.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        if causal {
            ensure!(r == c, Shape, "causal softmax needs a square matrix");
        }
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let lim = if causal { i + 1 } else { c };
            let row = &x.row(i)[..lim];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(i);
            let mut z = 0.0;
            for j in 0..lim {
                let e = (row[j] - m).exp();
                o[j] = e;
                z += e;
            }
            for v in &mut o[..lim] {
                *v /= z;
            }
        }
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    /// Per-row standardization `(x − mean)/sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        let mut out = Tensor::zeros(&[r, c]);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in out.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { src: a, inv_std }, &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            let u = GELU_C * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        ensure!(x.data().iter().all(|&v| v > 0.0), Degenerate, "log of non-positive value");
        let out = x.map(f64::ln);
        Ok(self.push(out, Op::Ln(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::scalar(x.sum() / x.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// Population variance of each column (`1×c` result).
    pub fn col_variance(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        ensure!(x.rows() >= 1, Degenerate, "variance of empty column");
        let mean = x.column_means();
        let r = x.rows();
        let mut var = vec![0.0; x.cols()];
        for i in 0..r {
            for ((acc, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= r as f64);
        let c = var.len();
        let out = Tensor::matrix(1, c, var)?;
        Ok(self.push(out, Op::ColVariance(a), &[a]))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let n = super::tensor::norm(x.row(i));
            ensure!(n > 0.0, Degenerate, "row {i} has zero norm");
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(self.push(out, Op::NormalizeRows { src: a, norms }, &[a]))
    }

    /// Top-`k` singular values of a matrix, descending, as a `1×k` row.
    ///
    /// The gradient is `Σ_j ḡ_j u_j v_jᵀ`, where `ḡ` averages the incoming
    /// gradient over clusters of singular values tied within [`SV_TIE_TOL`].
    pub fn singular_values(&mut self, a: Var, k: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        ensure!(k >= 1 && k <= m.min(n), Input, "rank cap {k} outside 1..={}", m.min(n));
        let s = svd(x)?;
        let u = s.u.col_range(0, k);
        let v = s.v.col_range(0, k);
        let out = Tensor::matrix(1, k, s.sigma[..k].to_vec())?;
        Ok(self.push(out, Op::SingularValues { src: a, u, v }, &[a]))
    }

    /// Shannon entropy of `s / Σs` for a nonnegative vector, with `0·ln 0 = 0`.
    pub fn entropy(&mut self, a: Var) -> Result<Var> {
        let h = normalized_entropy(self.value(a).data())?;
        Ok(self.push(Tensor::scalar(h), Op::Entropy(a), &[a]))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (r, c) = (x.rows(), x.cols());
        ensure!(targets.len() == r, Input, "{} targets for {} positions", targets.len(), r);
        ensure!(targets.iter().all(|&t| t < c), Input, "target id out of range");
        let mut probs = Tensor::zeros(&[r, c]);
        let mut loss = 0.0;
        for i in 0..r {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[targets[i]];
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / r as f64);
        let var = self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        );
        self.nodes[var.0].aux = Some(probs);
        Ok(var)
    }

    /// Copy of `src` with the listed rows replaced by the rows of the constant `donor`.
    pub fn replace_rows(&mut self, src: Var, rows: &[usize], donor: &Tensor) -> Result<Var> {
        let x = self.value(src);
        ensure!(
            donor.rows() == rows.len() && donor.cols() == x.cols(),
            Shape,
            "donor {:?} for {} rows of width {}",
            donor.shape(),
            rows.len(),
            x.cols()
        );
        ensure!(rows.iter().all(|&r| r < x.rows()), Input, "patch row out of range");
        let mut out = x.clone();
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(donor.row(k));
        }
        Ok(self.push(
            out,
            Op::ReplaceRows {
                src,
                rows: rows.to_vec(),
            },
            &[src],
        ))
    }

    /// Backpropagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        ensure!(self.value(loss).len() == 1, Input, "backward needs a scalar loss");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.propagate(idx, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign_scaled(&g, 1.0),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y).expect("shape"));
                self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y).expect("shape"));
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[bias.0].needs_grad {
                    let gb = Tensor::new(self.shape(*bias).to_vec(), column_sums(g)).expect("shape");
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::MulRow(a, gain) => {
                let (va, vg) = (self.value(*a), self.value(*gain));
                if self.nodes[a.0].needs_grad {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for (x, gv) in ga.row_mut(i).iter_mut().zip(vg.data()) {
                            *x *= gv;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[gain.0].needs_grad {
                    let prod = g.zip_map(va, |x, y| x * y).expect("shape");
                    let gg = Tensor::new(self.shape(*gain).to_vec(), column_sums(&prod)).expect("shape");
                    self.accumulate(grads, *gain, gg);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[a.0].needs_grad {
                    // g (m×n) · bᵀ (n×k)
                    let bt = vb.transpose();
                    let mut out = vec![0.0; m * k];
                    matmul_into(g.data(), bt.data(), &mut out, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(va.shape().to_vec(), out).expect("shape"));
                }
                if self.nodes[b.0].needs_grad {
                    // aᵀ (k×m) · g (m×n)
                    let at = va.transpose();
                    let mut out = vec![0.0; k * n];
                    matmul_into(at.data(), g.data(), &mut out, k, m, n);
                    self.accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), out).expect("shape"));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Gather { table, ids } => {
                let mut gt = Tensor::zeros(self.shape(*table));
                for (k, &i) in ids.iter().enumerate() {
                    for (d, s) in gt.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::SliceCols { src, start } => {
                let mut gs = Tensor::zeros(self.shape(*src));
                let w = g.cols();
                for i in 0..g.rows() {
                    gs.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *src, gs);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.accumulate(grads, *p, g.col_range(off, off + w));
                    off += w;
                }
            }
            Op::SliceRows { src, start } => {
                let mut gs = Tensor::zeros(self.shape(*src));
                let c = g.cols();
                gs.data_mut()[*start * c..(*start + g.rows()) * c].copy_from_slice(g.data());
                self.accumulate(grads, *src, gs);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    self.accumulate(grads, *p, g.row_range(off, off + r));
                    off += r;
                }
            }
            Op::Softmax(a) => {
                let mut gx = Tensor::zeros(y.shape());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in gx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dotp);
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::LayerNorm { src, inv_std } => {
                let c = y.cols() as f64;
                let mut gx = Tensor::zeros(y.shape());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let mg = gr.iter().sum::<f64>() / c;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                    for ((o, yv), gv) in gx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = inv_std[i] * (gv - mg - yv * mgy);
                    }
                }
                self.accumulate(grads, *src, gx);
            }
            Op::Gelu(a) => {
                let gx = self
                    .value(*a)
                    .zip_map(g, |x, gv| {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .expect("shape");
                self.accumulate(grads, *a, gx);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(y, |gv, yv| gv * yv).expect("shape")),
            Op::Ln(a) => {
                let gx = g.zip_map(self.value(*a), |gv, x| gv / x).expect("shape");
                self.accumulate(grads, *a, gx)
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, Tensor::filled(self.shape(*a), g.data()[0]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, Tensor::filled(self.shape(*a), g.data()[0] / n));
            }
            Op::ColVariance(a) => {
                let x = self.value(*a);
                let mean = x.column_means();
                let r = x.rows() as f64;
                let mut gx = Tensor::zeros(x.shape());
                for i in 0..x.rows() {
                    for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                        *o = g.data()[j] * 2.0 * (x.at(i, j) - mean[j]) / r;
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::NormalizeRows { src, norms } => {
                let mut gx = Tensor::zeros(y.shape());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in gx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * dotp) / norms[i];
                    }
                }
                self.accumulate(grads, *src, gx);
            }
            Op::SingularValues { src, u, v } => {
                let sig = y.data();
                let gs = tie_averaged(sig, g.data());
                let (m, n) = (u.rows(), v.rows());
                let mut ga = Tensor::zeros(&[m, n]);
                for (j, gj) in gs.iter().enumerate() {
                    if *gj == 0.0 {
                        continue;
                    }
                    for i in 0..m {
                        let ui = u.at(i, j) * gj;
                        if ui == 0.0 {
                            continue;
                        }
                        for (o, k) in ga.row_mut(i).iter_mut().zip(0..n) {
                            *o += ui * v.at(k, j);
                        }
                    }
                }
                self.accumulate(grads, *src, ga);
            }
            Op::Entropy(a) => {
                let s = self.value(*a);
                let total = s.sum();
                let h = y.data()[0];
                let gv = g.data()[0];
                let gx = s.map(|si| {
                    let p = (si / total).max(1e-300);
                    gv * (-p.ln() - h) / total
                });
                self.accumulate(grads, *a, gx);
            }
            Op::CrossEntropy { logits, targets } => {
                let probs = node.aux.as_ref().expect("cross-entropy cache");
                let r = probs.rows() as f64;
                let gv = g.data()[0];
                let mut gx = probs.scale(gv / r);
                for (i, &t) in targets.iter().enumerate() {
                    let c = gx.cols();
                    gx.data_mut()[i * c + t] -= gv / r;
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::ReplaceRows { src, rows } => {
                let mut gx = g.clone();
                for &r in rows {
                    gx.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                }
                self.accumulate(grads, *src, gx);
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

/// Replaces each gradient entry by the mean over its cluster of tied singular values.
fn tie_averaged(sigma: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = g.to_vec();
    let mut start = 0;
    while start < sigma.len() {
        let mut end = start + 1;
        while end < sigma.len() {
            let scale = sigma[end - 1].abs().max(sigma[end].abs()).max(f64::MIN_POSITIVE);
            if (sigma[end - 1] - sigma[end]).abs() <= SV_TIE_TOL * scale {
                end += 1;
            } else {
                break;
            }
        }
        if end - start > 1 {
            let mean = g[start..end].iter().sum::<f64>() / (end - start) as f64;
            out[start..end].iter_mut().for_each(|v| *v = mean);
        }
        start = end;
    }
    out
}

/// Entropy of the distribution proportional to a nonnegative vector.
pub fn normalized_entropy(s: &[f64]) -> Result<f64> {
    ensure!(s.iter().all(|&v| v >= 0.0), Input, "entropy of negative weights");
    let total: f64 = s.iter().sum();
    ensure!(total > 0.0, Degenerate, "entropy of an all-zero vector");
    Ok(-s
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Value and gradients of a scalar function built on a fresh tape.
///
/// `f` receives one differentiable leaf per entry of `params`.
pub fn value_and_grad<F>(f: F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    ensure!(tape.value(loss).len() == 1, Input, "function must return a scalar");
    let value = tape.scalar(loss);
    let mut grads = tape.backward(loss)?;
    Ok((value, vars.iter().map(|v| grads.take(*v)).collect()))
}

pub fn grad<F>(f: F, params: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    value_and_grad(f, params).map(|(_, g)| g)
}
