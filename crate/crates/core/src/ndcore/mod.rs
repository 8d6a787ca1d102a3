//! Dense `f64` kernels shared by the recurrent cells, the scaler and the
//! metrics.
//!
//! Storage is row-major. Every operation validates shapes before it writes
//! anything, so a shape error never leaves a half-updated output behind.

mod rng;

use std::fmt;
use std::ops::{Deref, DerefMut};

pub use rng::{derive_seed, Rng};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row 0 has {cols} columns"),
                    format!("row {i} has {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows, "row range out of bounds");
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape("vstack", self.shape_str(), other.shape_str()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows.min(6) {
            write!(f, "{:?}", self.row(r))?;
        }
        if self.rows > 6 {
            write!(f, " ...")?;
        }
        write!(f, "]")
    }
}

/// Dense vector.
#[derive(Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `[self, other]`, the layout the recurrent cells use for `[h, x]`.
    pub fn concat(&self, other: &Vector) -> Vector {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        Vector(v)
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::shape(
                "Vector::add",
                format!("len {}", self.len()),
                format!("len {}", other.len()),
            ));
        }
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::shape(
                "Vector::hadamard",
                format!("len {}", self.len()),
                format!("len {}", other.len()),
            ));
        }
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        self.iter().map(|&x| f(x)).collect()
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vector{:?}", self.0)
    }
}

/// `m · v`.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::shape(
            "matvec",
            m.shape_str(),
            format!("vector of len {}", v.len()),
        ));
    }
    let mut out = vec![0.0; m.rows];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, b) in m.row(i).iter().zip(v) {
            acc += a * b;
        }
        *o = acc;
    }
    Ok(Vector(out))
}

/// Logistic function, evaluated so that neither branch overflows.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vector {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh_v(v: &[f64]) -> Vector {
    v.iter().map(|&x| x.tanh()).collect()
}

/// `n` draws from `[lo, hi)`.
pub fn rng_uniform(rng: &mut Rng, lo: f64, hi: f64, n: usize) -> Result<Vector> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::param(format!(
            "uniform range requires finite lo < hi, got [{lo}, {hi})"
        )));
    }
    Ok((0..n).map(|_| rng.uniform(lo, hi)).collect())
}

/// `y += a * x`.
#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out = bias + Σ_k x[k] · wt.row(k)`, with `wt` stored input-major
/// (`x.len()` rows). Each output is accumulated in input order, so appending
/// zero inputs never changes the result.
#[inline]
pub(crate) fn affine_rowmajor(out: &mut [f64], bias: &[f64], x: &[f64], wt: &Matrix) {
    debug_assert_eq!(wt.rows(), x.len());
    debug_assert_eq!(wt.cols(), out.len());
    out.copy_from_slice(bias);
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            axpy(out, xk, wt.row(k));
        }
    }
}

const MR: usize = 4;
const NR: usize = 8;

/// `c += A · b`, where `pack(r, buf)` writes rows `r..r + MR` of `A` into
/// `buf` k-major (`buf[k * MR + i] = A[r + i][k]`) and `row(i)` yields row
/// `i` of `A` for the leftover rows. Every entry of `c` accumulates its
/// products in ascending `k`, starting from its current value.
#[inline(always)]
fn gemm_generic<'a>(
    c: &mut Matrix,
    kdim: usize,
    b: &Matrix,
    mut pack: impl FnMut(usize, &mut [f64]),
    row: impl Fn(usize) -> std::borrow::Cow<'a, [f64]>,
) {
    let (m, n) = c.shape();
    let bs = b.as_slice();
    let cs = c.as_mut_slice();
    let mut panel = vec![0.0; kdim * MR];
    let mut r = 0;
    while r + MR <= m {
        pack(r, &mut panel);
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[0.0; NR]; MR];
            for i in 0..MR {
                acc[i].copy_from_slice(&cs[(r + i) * n + j..(r + i) * n + j + NR]);
            }
            for k in 0..kdim {
                let brow: &[f64; NR] = bs[k * n + j..k * n + j + NR].try_into().expect("tile width");
                let av: &[f64; MR] = panel[k * MR..k * MR + MR].try_into().expect("tile height");
                for i in 0..MR {
                    for q in 0..NR {
                        acc[i][q] += av[i] * brow[q];
                    }
                }
            }
            for i in 0..MR {
                cs[(r + i) * n + j..(r + i) * n + j + NR].copy_from_slice(&acc[i]);
            }
            j += NR;
        }
        if j < n {
            for i in 0..MR {
                let ci = &mut cs[(r + i) * n + j..(r + i + 1) * n];
                for k in 0..kdim {
                    axpy(ci, panel[k * MR + i], &bs[k * n + j..(k + 1) * n]);
                }
            }
        }
        r += MR;
    }
    for i in r..m {
        let ai = row(i);
        let ci = &mut cs[i * n..(i + 1) * n];
        for (k, &av) in ai.iter().enumerate() {
            axpy(ci, av, &bs[k * n..(k + 1) * n]);
        }
    }
}

#[inline(always)]
fn gemm_nn_impl(c: &mut Matrix, a: &Matrix, b: &Matrix) {
    let kdim = a.cols();
    gemm_generic(
        c,
        kdim,
        b,
        |r, buf| {
            for i in 0..MR {
                for (k, &v) in a.row(r + i).iter().enumerate() {
                    buf[k * MR + i] = v;
                }
            }
        },
        |i| std::borrow::Cow::Borrowed(a.row(i)),
    )
}

#[inline(always)]
fn gemm_tn_impl(c: &mut Matrix, a: &Matrix, offset: usize, b: &Matrix) {
    let kdim = a.rows();
    gemm_generic(
        c,
        kdim,
        b,
        |r, buf| {
            for k in 0..kdim {
                buf[k * MR..k * MR + MR].copy_from_slice(&a.row(k)[offset + r..offset + r + MR]);
            }
        },
        |i| std::borrow::Cow::Owned((0..kdim).map(|k| a.get(k, offset + i)).collect()),
    )
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_nn_avx2(c: &mut Matrix, a: &Matrix, b: &Matrix) {
    gemm_nn_impl(c, a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_tn_avx2(c: &mut Matrix, a: &Matrix, offset: usize, b: &Matrix) {
    gemm_tn_impl(c, a, offset, b)
}

/// `c += a · b`.
pub(crate) fn gemm_nn(c: &mut Matrix, a: &Matrix, b: &Matrix) {
    debug_assert_eq!((c.rows(), c.cols()), (a.rows(), b.cols()));
    debug_assert_eq!(a.cols(), b.rows());
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { gemm_nn_avx2(c, a, b) };
        return;
    }
    gemm_nn_impl(c, a, b)
}

/// `c += a[:, offset..offset + c.rows()]ᵀ · b`.
pub(crate) fn gemm_tn(c: &mut Matrix, a: &Matrix, offset: usize, b: &Matrix) {
    debug_assert!(offset + c.rows() <= a.cols());
    debug_assert_eq!((a.rows(), c.cols()), (b.rows(), b.cols()));
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { gemm_tn_avx2(c, a, offset, b) };
        return;
    }
    gemm_tn_impl(c, a, offset, b)
}
