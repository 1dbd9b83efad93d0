//! Dense row-major linear algebra kernels.
//!
//! Everything here is deliberately plain: dot products accumulate strictly
//! left to right, matrices are contiguous row-major `Vec<f64>`, and there is
//! no SIMD, blocking, or BLAS. That buys bit-for-bit reproducibility of every
//! result regardless of worker count, which the rest of the crate depends on.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from row-major data; the length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
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

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Dense vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector {
            data: vec![0.0; dim],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

/// Inner product, accumulated strictly left to right.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

/// `m * v + bias`, validating shapes.
pub fn affine(m: &Matrix, v: &Vector, bias: Option<&Vector>) -> Result<Vector> {
    if m.cols != v.dim() {
        return Err(Error::shape("affine", m.shape_string(), format!("{}", v.dim())));
    }
    if let Some(b) = bias {
        if b.dim() != m.rows {
            return Err(Error::shape(
                "affine bias",
                format!("{} rows", m.rows),
                format!("{}", b.dim()),
            ));
        }
    }
    let mut out = Vector::zeros(m.rows);
    for i in 0..m.rows {
        let mut z = dot(m.row(i), v.data());
        if let Some(b) = bias {
            z += b.data()[i];
        }
        out.data[i] = z;
    }
    Ok(out)
}

/// `out[j] += sum_i m[i][j] * v[i]` (transpose-apply), rows visited in order.
pub(crate) fn matvec_t_add(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), m.rows);
    debug_assert_eq!(out.len(), m.cols);
    for (i, &vi) in v.iter().enumerate() {
        let row = m.row(i);
        for (o, &r) in out.iter_mut().zip(row) {
            *o += r * vi;
        }
    }
}

/// `m += a (outer) b`, i.e. `m[i][j] += a[i] * b[j]`.
pub(crate) fn outer_add(m: &mut Matrix, a: &[f64], b: &[f64]) {
    debug_assert_eq!(a.len(), m.rows);
    debug_assert_eq!(b.len(), m.cols);
    for (i, &ai) in a.iter().enumerate() {
        let row = m.row_mut(i);
        for (r, &bj) in row.iter_mut().zip(b) {
            *r += ai * bj;
        }
    }
}

pub(crate) fn add_assign(out: &mut [f64], rhs: &[f64]) {
    debug_assert_eq!(out.len(), rhs.len());
    for (o, r) in out.iter_mut().zip(rhs) {
        *o += r;
    }
}

/// Largest absolute difference between two equally sized slices.
pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        worst = worst.max((x - y).abs());
    }
    worst
}

/// Pointwise nonlinearity applied by the recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative evaluated at pre-activation `z`.
    #[inline]
    pub fn deriv(self, z: f64) -> f64 {
        self.deriv_from_output(self.apply(z))
    }

    /// Derivative recovered from the activation output `y = apply(z)`.
    /// tanh' = 1 - y^2, sigmoid' = y (1 - y).
    #[inline]
    pub fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Invalid {
                what: "activation",
                detail: format!("expected tanh or sigmoid, got {other:?}"),
            }),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Apply an activation elementwise.
pub fn activation(kind: Activation, z: &Vector) -> Vector {
    Vector::from_vec(z.data().iter().map(|&x| kind.apply(x)).collect())
}

/// Elementwise derivative of the activation at `z`.
pub fn activation_deriv(kind: Activation, z: &Vector) -> Vector {
    Vector::from_vec(z.data().iter().map(|&x| kind.deriv(x)).collect())
}

/// Numerically stable log-softmax: subtract the max before exponentiating.
pub fn log_softmax(logits: &Vector) -> Vector {
    let mut out = logits.clone();
    log_softmax_in_place(out.data_mut());
    out
}

pub(crate) fn log_softmax_in_place(logits: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &x in logits.iter() {
        if x > max {
            max = x;
        }
    }
    let mut sum = 0.0;
    for &x in logits.iter() {
        sum += (x - max).exp();
    }
    let lse = max + sum.ln();
    for x in logits.iter_mut() {
        *x -= lse;
    }
}

/// Negative log-probability of entry `target` under softmax(`logits`), without
/// materializing the full distribution.
pub(crate) fn nll_from_logits(logits: &[f64], target: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &x in logits.iter() {
        if x > max {
            max = x;
        }
    }
    let mut sum = 0.0;
    for &x in logits.iter() {
        sum += (x - max).exp();
    }
    (max + sum.ln()) - logits[target]
}
