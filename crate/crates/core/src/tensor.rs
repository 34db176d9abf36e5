//! Dense matrices and a reverse-mode tape.
//!
//! Every value in the model is a row-major `rows x cols` matrix of `f64`;
//! vectors are `1 x n` or `n x 1`. Operations are recorded on a [`Tape`] in
//! execution order, so the record is topologically sorted by construction and
//! [`Tape::backward`] visits each node exactly once in reverse.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "tensor",
                left: vec![rows, cols],
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape: [rows, cols],
            data,
        })
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Self {
            shape: [rows, cols],
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self::from_vec(1, 1, vec![x])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 })
            .collect();
        Self::from_vec(rows, cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self::from_vec(rows.len(), self.cols(), data)
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::from_vec(n, m, out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape.to_vec(),
                right: other.shape.to_vec(),
            });
        }
        Ok(matmul_raw(self, other))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_vec(self.rows(), self.cols(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                left: self.shape.to_vec(),
                right: other.shape.to_vec(),
            });
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(m, n, out)
}

/// `a^T * b` without materializing the transpose.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(m, n, out)
}

/// `a * b^T` without materializing the transpose.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::from_vec(m, n, out)
}

/// Sparse weighted neighbor sum: `out[u] = sum_j coeff_j * x[v_j]` over the
/// entries of row `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Mask(Var, Arc<Vec<f64>>),
    ConcatCols(Vec<Var>),
    Column(Var, usize),
    Sparse(Var, Arc<SparseRows>),
    Sum(Var),
    Bce(Var, Arc<Vec<f64>>, Arc<Vec<f64>>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Lower/upper clamp applied to probabilities before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`], produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of `v`; zeros if the output does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    fn zip(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_shape(y, op)?;
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_vec(x.rows(), x.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `a + 1 * row` for an `m x n` matrix and a `1 x n` row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: x.shape.to_vec(),
                right: r.shape.to_vec(),
            });
        }
        let n = x.cols();
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r.data[i % n])
            .collect();
        let out = Tensor::from_vec(x.rows(), n, data);
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Scales row `i` of an `m x n` matrix by entry `i` of an `m x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (x, c) = (self.value(a), self.value(col));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(Error::Shape {
                op: "mul_col",
                left: x.shape.to_vec(),
                right: c.shape.to_vec(),
            });
        }
        let n = x.cols();
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v * c.data[i / n])
            .collect();
        let out = Tensor::from_vec(x.rows(), n, data);
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(out, Op::OneMinus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Softmax over each row, stabilized by subtracting the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a))?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Inverted dropout. Identity (no node recorded) when not training or
    /// when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return arg(format!("dropout rate {rate} outside [0, 1)"));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let x = self.value(a);
        let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        Ok(self.push(out, Op::Mask(a, Arc::new(mask))))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return arg("concat of zero tensors");
        };
        let m = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.value(first).shape.to_vec(),
                    right: self.value(p).shape.to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_vec(m, total, data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Column `j` as an `m x 1` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let x = self.value(a);
        if j >= x.cols() {
            return arg(format!("column {j} out of range for {:?}", x.shape));
        }
        let data = (0..x.rows()).map(|i| x.get(i, j)).collect();
        let out = Tensor::from_vec(x.rows(), 1, data);
        Ok(self.push(out, Op::Column(a, j)))
    }

    pub fn sparse(&mut self, a: Var, weights: Arc<SparseRows>) -> Result<Var> {
        let x = self.value(a);
        let n = x.cols();
        let mut out = Tensor::zeros(weights.rows.len(), n);
        for (u, entries) in weights.rows.iter().enumerate() {
            let orow = &mut out.data[u * n..(u + 1) * n];
            for &(v, w) in entries {
                if v >= x.rows() {
                    return arg(format!("sparse index {v} out of range for {:?}", x.shape));
                }
                for (o, &xv) in orow.iter_mut().zip(x.row(v)) {
                    *o += w * xv;
                }
            }
        }
        Ok(self.push(out, Op::Sparse(a, weights)))
    }

    /// Sum of all entries as a `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Weighted mean binary cross-entropy of probabilities `psi` against
    /// `labels`: `sum_u w_u * bce_u / sum_u w_u`. Probabilities are clamped
    /// to `[BCE_CLAMP, 1 - BCE_CLAMP]`; the clamp passes no gradient.
    pub fn bce(&mut self, psi: Var, labels: &[f64], weights: Option<&[f64]>) -> Result<Var> {
        let p = self.value(psi);
        if p.len() != labels.len() {
            return Err(Error::Shape {
                op: "bce",
                left: p.shape.to_vec(),
                right: vec![labels.len()],
            });
        }
        let weights = match weights {
            Some(w) if w.len() != labels.len() => {
                return Err(Error::Shape {
                    op: "bce weights",
                    left: vec![labels.len()],
                    right: vec![w.len()],
                })
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; labels.len()],
        };
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return arg("bce with no weighted entries");
        }
        let loss = p
            .data
            .iter()
            .zip(labels)
            .zip(&weights)
            .map(|((&q, &y), &w)| w * bce_term(q, y))
            .sum::<f64>()
            / total;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce(psi, Arc::new(labels.to_vec()), Arc::new(weights)),
        ))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape != [1, 1] {
            return Err(Error::Shape {
                op: "backward",
                left: out.shape.to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, d: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let elementwise = |src: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            let data = src.data.iter().zip(&g.data).map(|(&x, &gv)| f(x, gv)).collect();
            Tensor::from_vec(src.rows(), src.cols(), data)
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, matmul_nt(g, val(*b)));
                acc(*b, matmul_tn(val(*a), g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, elementwise(val(*b), &|y, gv| y * gv));
                acc(*b, elementwise(val(*a), &|x, gv| x * gv));
            }
            Op::AddRow(a, row) => {
                let n = g.cols();
                let mut rg = vec![0.0; n];
                for (k, &gv) in g.data.iter().enumerate() {
                    rg[k % n] += gv;
                }
                acc(*a, g.clone());
                acc(*row, Tensor::from_vec(1, n, rg));
            }
            Op::MulCol(a, col) => {
                let (x, c) = (val(*a), val(*col));
                let n = x.cols();
                let mut ga = g.clone();
                let mut gc = vec![0.0; x.rows()];
                for (k, gv) in ga.data.iter_mut().enumerate() {
                    gc[k / n] += *gv * x.data[k];
                    *gv *= c.data[k / n];
                }
                acc(*a, ga);
                acc(*col, Tensor::from_vec(x.rows(), 1, gc));
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::OneMinus(a) => acc(*a, g.map(|x| -x)),
            Op::Relu(a) => acc(*a, elementwise(val(*a), &|x, gv| if x > 0.0 { gv } else { 0.0 })),
            Op::Tanh(a) => acc(*a, elementwise(&node.value, &|y, gv| (1.0 - y * y) * gv)),
            Op::Sigmoid(a) => acc(*a, elementwise(&node.value, &|y, gv| y * (1.0 - y) * gv)),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let n = y.cols();
                let mut out = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = &y.data[r * n..(r + 1) * n];
                    let gr = &g.data[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        out[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, Tensor::from_vec(y.rows(), n, out));
            }
            Op::Mask(a, mask) => {
                let data = g.data.iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
                acc(*a, Tensor::from_vec(g.rows(), g.cols(), data));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut d = Vec::with_capacity(g.rows() * w);
                    for r in 0..g.rows() {
                        d.extend_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    acc(p, Tensor::from_vec(g.rows(), w, d));
                    offset += w;
                }
            }
            Op::Column(a, j) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    d.set(r, *j, g.data[r]);
                }
                acc(*a, d);
            }
            Op::Sparse(a, weights) => {
                let x = val(*a);
                let n = x.cols();
                let mut d = Tensor::zeros(x.rows(), n);
                for (u, entries) in weights.rows.iter().enumerate() {
                    let grow = g.row(u);
                    for &(v, w) in entries {
                        let drow = &mut d.data[v * n..(v + 1) * n];
                        for (o, &gv) in drow.iter_mut().zip(grow) {
                            *o += w * gv;
                        }
                    }
                }
                acc(*a, d);
            }
            Op::Sum(a) => {
                let x = val(*a);
                acc(*a, Tensor::full(x.rows(), x.cols(), g.data[0]));
            }
            Op::Bce(psi, labels, weights) => {
                let p = val(*psi);
                let total: f64 = weights.iter().sum();
                let s = g.data[0] / total;
                let data = p
                    .data
                    .iter()
                    .zip(labels.iter())
                    .zip(weights.iter())
                    .map(|((&q, &y), &w)| {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&q) {
                            0.0
                        } else {
                            s * w * (-y / q + (1.0 - y) / (1.0 - q))
                        }
                    })
                    .collect();
                acc(*psi, Tensor::from_vec(p.rows(), p.cols(), data));
            }
        }
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

fn bce_term(q: f64, y: f64) -> f64 {
    let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

/// Row-wise softmax of a plain tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.is_empty() {
        return arg("softmax of an empty tensor");
    }
    let n = x.cols();
    let mut out = x.data.clone();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_vec(x.rows(), n, out))
}

/// Mean binary cross-entropy with the standard clamp.
pub fn bce_loss(psi: &[f64], labels: &[f64]) -> Result<f64> {
    if psi.len() != labels.len() {
        return Err(Error::Shape {
            op: "bce_loss",
            left: vec![psi.len()],
            right: vec![labels.len()],
        });
    }
    if psi.is_empty() {
        return arg("bce of empty vectors");
    }
    Ok(psi.iter().zip(labels).map(|(&q, &y)| bce_term(q, y)).sum::<f64>() / psi.len() as f64)
}

/// Smallest denominator used for relative errors in [`grad_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Result of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` receives a fresh tape and one leaf per parameter and must return a
/// `1 x 1` output. Relative error per entry uses the denominator
/// `max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return arg("grad_check step must be positive");
    }
    let eval = |ps: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let y = tape.value(out);
        if y.shape != [1, 1] {
            return Err(Error::Shape {
                op: "grad_check",
                left: y.shape.to_vec(),
                right: vec![1, 1],
            });
        }
        if !y.data[0].is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", y.data[0])));
        }
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(params)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();

    let mut work = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for pi in 0..params.len() {
        let mut num = Tensor::zeros(params[pi].rows(), params[pi].cols());
        for k in 0..params[pi].len() {
            let orig = work[pi].data[k];
            work[pi].data[k] = orig + eps;
            let (tp, _, op) = eval(&work)?;
            let plus = tp.value(op).data[0];
            work[pi].data[k] = orig - eps;
            let (tm, _, om) = eval(&work)?;
            let minus = tm.value(om).data[0];
            work[pi].data[k] = orig;
            let n = (plus - minus) / (2.0 * eps);
            num.data[k] = n;
            let a = analytic[pi].data[k];
            let denom = a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR);
            max_abs = max_abs.max((a - n).abs());
            max_rel = max_rel.max((a - n).abs() / denom);
        }
        numeric.push(num);
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        analytic,
        numeric,
    })
}
