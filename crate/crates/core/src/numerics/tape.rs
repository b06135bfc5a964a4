//! Define-by-run reverse-mode differentiation over complex tensors.
//!
//! Every node stores its forward value. Gradients are carried as
//! `dL/d(re) + j dL/d(im)` for a real-valued loss `L`, so a complex
//! parameter behaves like two real parameters. With that convention a
//! holomorphic map `y = f(z)` pulls back as `g_z = g_y * conj(f'(z))`.
//!
//! Ops whose names describe real functions (`exp`, `log`, `relu`, ...) act
//! on the real plane only and emit a real result.
//!
//! Binary elementwise ops broadcast any unit dimension against the other
//! operand (scalar, row vector, column vector).

use num_complex::Complex64;

use super::tensor::{pairwise_sum_by, ComplexTensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Conj(usize),
    Abs2(usize),
    MatMul(usize, usize),
    Adjoint(usize),
    Trace(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    MeanRows(usize),
    Reshape(usize),
    SelectCols(usize, Vec<usize>),
    LogSumExpGroups(usize, Vec<Vec<usize>>),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Softplus(usize),
    Sigmoid(usize),
    Clamp(usize, f64, f64),
}

#[derive(Debug)]
struct Node {
    value: ComplexTensor,
    op: Op,
    param: bool,
    needs_grad: bool,
}

/// Recorded computation. Nodes are appended in evaluation order, so every
/// node's parents precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the tracked parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<ComplexTensor>>,
}

impl Gradients {
    /// `re` holds dL/d(re p), `im` holds dL/d(im p). `None` for anything that
    /// is not a tracked parameter.
    pub fn get(&self, var: Var) -> Option<&ComplexTensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::shape(
            op,
            format!("cannot broadcast {}x{} with {}x{}", a[0], a[1], b[0], b[1]),
        )),
    }
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

fn zip_broadcast(
    a: &ComplexTensor,
    b: &ComplexTensor,
    out_shape: [usize; 2],
    f: impl Fn(Complex64, Complex64) -> Complex64,
) -> ComplexTensor {
    let mut out = ComplexTensor::zeros(out_shape[0], out_shape[1]);
    if a.shape() == out_shape && b.shape() == out_shape {
        for k in 0..out.len() {
            let z = f(a.at(k), b.at(k));
            out.re[k] = z.re;
            out.im[k] = z.im;
        }
        return out;
    }
    let (sa, sb) = (a.shape(), b.shape());
    for r in 0..out_shape[0] {
        for c in 0..out_shape[1] {
            let z = f(a.at(bidx(sa, r, c)), b.at(bidx(sb, r, c)));
            let k = r * out_shape[1] + c;
            out.re[k] = z.re;
            out.im[k] = z.im;
        }
    }
    out
}

/// Sum a full-shape gradient down to a (possibly broadcast) operand shape.
fn reduce_to(g: ComplexTensor, shape: [usize; 2]) -> ComplexTensor {
    if g.shape() == shape {
        return g;
    }
    let mut out = ComplexTensor::zeros(shape[0], shape[1]);
    let gs = g.shape();
    for r in 0..gs[0] {
        for c in 0..gs[1] {
            let k = r * gs[1] + c;
            let t = bidx(shape, r, c);
            out.re[t] += g.re[k];
            out.im[t] += g.im[k];
        }
    }
    out
}

fn map_real(a: &ComplexTensor, f: impl Fn(f64) -> f64) -> ComplexTensor {
    let re = a.re.iter().map(|&v| f(v)).collect();
    ComplexTensor::real(a.rows(), a.cols(), re).expect("same length")
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
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

    /// Trainable leaf.
    pub fn param(&mut self, value: ComplexTensor) -> Var {
        self.push_node(value, Op::Leaf, true, true)
    }

    /// Untracked leaf; receives no gradient.
    pub fn constant(&mut self, value: ComplexTensor) -> Var {
        self.push_node(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &ComplexTensor {
        &self.nodes[v.0].value
    }

    /// Real part of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.re[0]
    }

    fn push_node(&mut self, value: ComplexTensor, op: Op, param: bool, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: ComplexTensor, op: Op, parents: &[usize]) -> Var {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.push_node(value, op, false, needs_grad)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(name, va.shape(), vb.shape())?;
        let out = zip_broadcast(va, vb, shape, f);
        Ok(self.push(out, op, &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// Elementwise complex division. Fails if any divisor is zero.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let vb = &self.nodes[b.0].value;
        if vb.re.iter().zip(&vb.im).any(|(r, i)| *r == 0.0 && *i == 0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        self.binary("div", a, b, Op::Div(a.0, b.0), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.scaled(-1.0);
        self.push(v, Op::Neg(a.0), &[a.0])
    }

    /// Multiply by a real constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.nodes[a.0].value.scaled(s);
        self.push(v, Op::Scale(a.0, s), &[a.0])
    }

    pub fn conj(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.conj();
        self.push(v, Op::Conj(a.0), &[a.0])
    }

    /// `|a|^2` elementwise; real result.
    pub fn abs2(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let re = va
            .re
            .iter()
            .zip(&va.im)
            .map(|(r, i)| r * r + i * i)
            .collect();
        let v = ComplexTensor::real(va.rows(), va.cols(), re).expect("same length");
        self.push(v, Op::Abs2(a.0), &[a.0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(v, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// Conjugate transpose.
    pub fn adjoint(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.adjoint();
        self.push(v, Op::Adjoint(a.0), &[a.0])
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if va.rows() != va.cols() {
            return Err(Error::shape(
                "trace",
                format!("{}x{} is not square", va.rows(), va.cols()),
            ));
        }
        let v = ComplexTensor::complex_scalar(va.trace());
        Ok(self.push(v, Op::Trace(a.0), &[a.0]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let re = pairwise_sum_by(va.len(), |k| va.re[k]);
        let im = pairwise_sum_by(va.len(), |k| va.im[k]);
        let v = ComplexTensor::complex_scalar(Complex64::new(re, im));
        self.push(v, Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let n = va.len() as f64;
        let re = pairwise_sum_by(va.len(), |k| va.re[k]) / n;
        let im = pairwise_sum_by(va.len(), |k| va.im[k]) / n;
        let v = ComplexTensor::complex_scalar(Complex64::new(re, im));
        self.push(v, Op::Mean(a.0), &[a.0])
    }

    fn collapse_rows(va: &ComplexTensor, scale: f64) -> ComplexTensor {
        let (rows, cols) = (va.rows(), va.cols());
        let mut out = ComplexTensor::zeros(1, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.re[c] += va.re[r * cols + c];
                out.im[c] += va.im[r * cols + c];
            }
        }
        out.scaled(scale)
    }

    /// Sum down each column: `rows x cols -> 1 x cols`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = Self::collapse_rows(&self.nodes[a.0].value, 1.0);
        self.push(v, Op::SumRows(a.0), &[a.0])
    }

    /// Mean down each column: `rows x cols -> 1 x cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let v = Self::collapse_rows(va, 1.0 / va.rows() as f64);
        self.push(v, Op::MeanRows(a.0), &[a.0])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.nodes[a.0].value.reshaped(rows, cols)?;
        Ok(self.push(v, Op::Reshape(a.0), &[a.0]))
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if let Some(&bad) = cols.iter().find(|&&c| c >= va.cols()) {
            return Err(Error::shape(
                "select_cols",
                format!("column {bad} out of range for {} columns", va.cols()),
            ));
        }
        let mut out = ComplexTensor::zeros(va.rows(), cols.len());
        for r in 0..va.rows() {
            for (j, &c) in cols.iter().enumerate() {
                out.re[r * cols.len() + j] = va.re[r * va.cols() + c];
                out.im[r * cols.len() + j] = va.im[r * va.cols() + c];
            }
        }
        Ok(self.push(out, Op::SelectCols(a.0, cols.to_vec()), &[a.0]))
    }

    /// Row-wise log-sum-exp over each column group:
    /// `out[r, g] = log sum_{c in groups[g]} exp(a[r, c])`. Real.
    pub fn logsumexp_groups(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        for g in groups {
            if g.is_empty() || g.iter().any(|&c| c >= va.cols()) {
                return Err(Error::shape(
                    "logsumexp_groups",
                    format!("invalid group {g:?} for {} columns", va.cols()),
                ));
            }
        }
        let (rows, cols) = (va.rows(), va.cols());
        let mut re = Vec::with_capacity(rows * groups.len());
        for r in 0..rows {
            let row = &va.re[r * cols..(r + 1) * cols];
            for g in groups {
                re.push(logsumexp(g.iter().map(|&c| row[c])));
            }
        }
        let v = ComplexTensor::real(rows, groups.len(), re)?;
        Ok(self.push(v, Op::LogSumExpGroups(a.0, groups.to_vec()), &[a.0]))
    }

    /// Row-wise log-sum-exp across all columns: `rows x cols -> rows x 1`.
    pub fn logsumexp_cols(&mut self, a: Var) -> Result<Var> {
        let cols = self.nodes[a.0].value.cols();
        self.logsumexp_groups(a, &[(0..cols).collect()])
    }

    /// `max(re a, 0)`; the subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = map_real(&self.nodes[a.0].value, |x| x.max(0.0));
        self.push(v, Op::Relu(a.0), &[a.0])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = map_real(&self.nodes[a.0].value, f64::exp);
        self.push(v, Op::Exp(a.0), &[a.0])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if va.re.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        let v = map_real(va, f64::ln);
        Ok(self.push(v, Op::Log(a.0), &[a.0]))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if va.re.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("sqrt of a non-positive value".into()));
        }
        let v = map_real(va, f64::sqrt);
        Ok(self.push(v, Op::Sqrt(a.0), &[a.0]))
    }

    /// `log(1 + exp(x))`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = map_real(&self.nodes[a.0].value, softplus);
        self.push(v, Op::Softplus(a.0), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = map_real(&self.nodes[a.0].value, sigmoid);
        self.push(v, Op::Sigmoid(a.0), &[a.0])
    }

    /// Clamp the real part to `[lo, hi]`; zero gradient where clamped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = map_real(&self.nodes[a.0].value, |x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a.0, lo, hi), &[a.0])
    }

    /// Reverse pass from a real scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        if lv.im[0].abs() > 1e-12 * lv.re[0].abs().max(1.0) {
            return Err(Error::Contract(format!(
                "backward needs a real loss, imaginary part is {}",
                lv.im[0]
            )));
        }

        let mut grads: Vec<Option<ComplexTensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(ComplexTensor::scalar(1.0));
        let mut out: Vec<Option<ComplexTensor>> = vec![None; self.nodes.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.param {
                out[i] = Some(g);
                continue;
            }
            self.propagate(i, &node.op, g, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<ComplexTensor>], idx: usize, g: ComplexTensor) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => {
                for (e, v) in existing.re.iter_mut().zip(&g.re) {
                    *e += v;
                }
                for (e, v) in existing.im.iter_mut().zip(&g.im) {
                    *e += v;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn val(&self, idx: usize) -> &ComplexTensor {
        &self.nodes[idx].value
    }

    fn real_grad(&self, a: usize, g: &ComplexTensor, df: impl Fn(usize) -> f64) -> ComplexTensor {
        let va = self.val(a);
        let re = (0..va.len()).map(|k| df(k) * g.re[k]).collect();
        ComplexTensor::real(va.rows(), va.cols(), re).expect("same length")
    }

    fn propagate(&self, i: usize, op: &Op, g: ComplexTensor, grads: &mut [Option<ComplexTensor>]) {
        let y = self.val(i);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = reduce_to(g.clone(), self.val(a).shape());
                let gb = reduce_to(g, self.val(b).shape());
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Sub(a, b) => {
                let ga = reduce_to(g.clone(), self.val(a).shape());
                let gb = reduce_to(g.scaled(-1.0), self.val(b).shape());
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(a), self.val(b));
                if self.nodes[a].needs_grad {
                    let ga = zip_broadcast(&g, vb, g.shape(), |gy, z| gy * z.conj());
                    self.accumulate(grads, a, reduce_to(ga, va.shape()));
                }
                if self.nodes[b].needs_grad {
                    let gb = zip_broadcast(&g, va, g.shape(), |gy, z| gy * z.conj());
                    self.accumulate(grads, b, reduce_to(gb, vb.shape()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.val(a), self.val(b));
                if self.nodes[a].needs_grad {
                    let ga = zip_broadcast(&g, vb, g.shape(), |gy, z| gy * z.inv().conj());
                    self.accumulate(grads, a, reduce_to(ga, va.shape()));
                }
                if self.nodes[b].needs_grad {
                    // d(a/b)/db = -(a/b)/b = -y/b
                    let yb = zip_broadcast(y, vb, g.shape(), |yv, z| -yv / z);
                    let gb = zip_broadcast(&g, &yb, g.shape(), |gy, d| gy * d.conj());
                    self.accumulate(grads, b, reduce_to(gb, vb.shape()));
                }
            }
            Op::Neg(a) => self.accumulate(grads, a, g.scaled(-1.0)),
            Op::Scale(a, s) => self.accumulate(grads, a, g.scaled(s)),
            Op::Conj(a) => self.accumulate(grads, a, g.conj()),
            Op::Abs2(a) => {
                let va = self.val(a);
                let mut ga = ComplexTensor::zeros(va.rows(), va.cols());
                for k in 0..va.len() {
                    ga.re[k] = 2.0 * va.re[k] * g.re[k];
                    ga.im[k] = 2.0 * va.im[k] * g.re[k];
                }
                self.accumulate(grads, a, ga);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.val(a), self.val(b));
                if self.nodes[a].needs_grad {
                    let ga = g.matmul(&vb.adjoint()).expect("shapes checked in forward");
                    self.accumulate(grads, a, ga);
                }
                if self.nodes[b].needs_grad {
                    let gb = va.adjoint().matmul(&g).expect("shapes checked in forward");
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Adjoint(a) => self.accumulate(grads, a, g.adjoint()),
            Op::Trace(a) => {
                let n = self.val(a).rows();
                let mut ga = ComplexTensor::zeros(n, n);
                for d in 0..n {
                    ga.re[d * n + d] = g.re[0];
                    ga.im[d * n + d] = g.im[0];
                }
                self.accumulate(grads, a, ga);
            }
            Op::Sum(a) | Op::Mean(a) => {
                let va = self.val(a);
                let s = if matches!(op, Op::Mean(_)) {
                    1.0 / va.len() as f64
                } else {
                    1.0
                };
                let ga = ComplexTensor::new(
                    va.rows(),
                    va.cols(),
                    vec![g.re[0] * s; va.len()],
                    vec![g.im[0] * s; va.len()],
                )
                .expect("same length");
                self.accumulate(grads, a, ga);
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let va = self.val(a);
                let s = if matches!(op, Op::MeanRows(_)) {
                    1.0 / va.rows() as f64
                } else {
                    1.0
                };
                let mut ga = ComplexTensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    for c in 0..va.cols() {
                        ga.re[r * va.cols() + c] = g.re[c] * s;
                        ga.im[r * va.cols() + c] = g.im[c] * s;
                    }
                }
                self.accumulate(grads, a, ga);
            }
            Op::Reshape(a) => {
                let [r, c] = self.val(a).shape();
                self.accumulate(grads, a, g.reshaped(r, c).expect("same length"));
            }
            Op::SelectCols(a, ref cols) => {
                let va = self.val(a);
                let mut ga = ComplexTensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    for (j, &c) in cols.iter().enumerate() {
                        ga.re[r * va.cols() + c] += g.re[r * cols.len() + j];
                        ga.im[r * va.cols() + c] += g.im[r * cols.len() + j];
                    }
                }
                self.accumulate(grads, a, ga);
            }
            Op::LogSumExpGroups(a, ref groups) => {
                let va = self.val(a);
                let (rows, cols) = (va.rows(), va.cols());
                let mut ga = ComplexTensor::zeros(rows, cols);
                for r in 0..rows {
                    for (gi, grp) in groups.iter().enumerate() {
                        let k = r * groups.len() + gi;
                        let (lse, gy) = (y.re[k], g.re[k]);
                        for &c in grp {
                            ga.re[r * cols + c] += (va.re[r * cols + c] - lse).exp() * gy;
                        }
                    }
                }
                self.accumulate(grads, a, ga);
            }
            Op::Relu(a) => {
                let va = self.val(a);
                let ga = self.real_grad(a, &g, |k| if va.re[k] > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(grads, a, ga);
            }
            Op::Exp(a) => {
                let ga = self.real_grad(a, &g, |k| y.re[k]);
                self.accumulate(grads, a, ga);
            }
            Op::Log(a) => {
                let va = self.val(a);
                let ga = self.real_grad(a, &g, |k| 1.0 / va.re[k]);
                self.accumulate(grads, a, ga);
            }
            Op::Sqrt(a) => {
                let ga = self.real_grad(a, &g, |k| 0.5 / y.re[k]);
                self.accumulate(grads, a, ga);
            }
            Op::Softplus(a) => {
                let va = self.val(a);
                let ga = self.real_grad(a, &g, |k| sigmoid(va.re[k]));
                self.accumulate(grads, a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = self.real_grad(a, &g, |k| y.re[k] * (1.0 - y.re[k]));
                self.accumulate(grads, a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.val(a);
                let ga = self.real_grad(a, &g, |k| {
                    let x = va.re[k];
                    if x > lo && x < hi {
                        1.0
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abs2_gradient_is_twice_components() {
        let mut t = Tape::new();
        let x = t.param(ComplexTensor::complex_scalar(Complex64::new(1.0, 2.0)));
        let y = t.abs2(x);
        let g = t.backward(y).unwrap();
        let gx = g.get(x).unwrap();
        assert_eq!((gx.re[0], gx.im[0]), (2.0, 4.0));
    }

    #[test]
    fn trace_of_gram_at_identity() {
        let mut t = Tape::new();
        let q = t.param(ComplexTensor::identity(2));
        let qh = t.adjoint(q);
        let gram = t.matmul(q, qh).unwrap();
        let tr = t.trace(gram).unwrap();
        assert_eq!(t.scalar(tr), 2.0);
        let g = t.backward(tr).unwrap();
        let gq = g.get(q).unwrap();
        assert_eq!(gq.re, vec![2.0, 0.0, 0.0, 2.0]);
        assert_eq!(gq.im, vec![0.0; 4]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let p = t.param(ComplexTensor::scalar(3.0));
        let c = t.constant(ComplexTensor::scalar(2.0));
        let y = t.mul(p, c).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(p).unwrap().re[0], 2.0);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.param(ComplexTensor::real(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let r = t.relu(x);
        let s = t.sum(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().re, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_complex_loss() {
        let mut t = Tape::new();
        let x = t.param(ComplexTensor::zeros(2, 1));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
        let z = t.param(ComplexTensor::complex_scalar(Complex64::new(1.0, 1.0)));
        assert!(matches!(t.backward(z), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_column_times_matrix() {
        let mut t = Tape::new();
        let q = t.param(ComplexTensor::real(2, 1, vec![2.0, 3.0]).unwrap());
        let m = t.constant(ComplexTensor::real(2, 3, vec![1.0; 6]).unwrap());
        let y = t.mul(q, m).unwrap();
        assert_eq!(t.value(y).re, vec![2.0, 2.0, 2.0, 3.0, 3.0, 3.0]);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(q).unwrap().re, vec![3.0, 3.0]);
    }

    #[test]
    fn incompatible_broadcast_is_a_shape_error() {
        let mut t = Tape::new();
        let a = t.constant(ComplexTensor::zeros(2, 3));
        let b = t.constant(ComplexTensor::zeros(3, 2));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn parents_precede_children() {
        let mut t = Tape::new();
        let a = t.param(ComplexTensor::scalar(1.0));
        let b = t.exp(a);
        let c = t.mul(a, b).unwrap();
        assert!(a.index() < b.index() && b.index() < c.index());
    }
}
