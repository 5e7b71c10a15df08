//! Dense row-major matrices with instrumented kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

use crate::error::{invalid, Result};
use crate::trace;

/// Floating-point precision of a computation or a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Scalar type the kernels are generic over (`f32` or `f64`).
pub trait Real:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense matrix.
///
/// Arithmetic methods report their operation counts to [`crate::trace`];
/// allocations and drops are reported to the allocation audit.
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> Drop for Matrix<T> {
    fn drop(&mut self) {
        trace::on_free(self.data.len());
    }
}

impl<T: Real> Clone for Matrix<T> {
    fn clone(&self) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.clone())
    }
}

impl<T: Real> Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "\n  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl<T: Real> PartialEq for Matrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data == other.data
    }
}

impl<T: Real> Matrix<T> {
    fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        trace::on_alloc(data.len());
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(invalid(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self::from_raw(rows, cols, data))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged rows"));
        }
        Ok(Self::from_raw(rows.len(), cols, rows.concat()))
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(mut self) -> Vec<T> {
        // Drop still runs on the emptied buffer and frees 0 elements.
        let len = self.data.len();
        trace::on_free(len);
        std::mem::take(&mut self.data)
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Same buffer viewed with a different shape.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(invalid(format!(
                "cannot reshape {}x{} into {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        let mut m = self;
        m.rows = rows;
        m.cols = cols;
        Ok(m)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copy of the top-left `rows x cols` block.
    pub fn crop(&self, rows: usize, cols: usize) -> Self {
        assert!(rows <= self.rows && cols <= self.cols);
        Self::from_fn(rows, cols, |r, c| self[(r, c)])
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != rhs.rows {
            return Err(shape_err("matmul", self, rhs));
        }
        let (m, p, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.data[i * p..(i + 1) * p].iter().enumerate() {
                let brow = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        trace::macs(m * p * n);
        Ok(out)
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != rhs.rows {
            return Err(shape_err("matmul_tn", self, rhs));
        }
        let (p, m, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Self::zeros(m, n);
        for k in 0..p {
            let arow = &self.data[k * m..(k + 1) * m];
            let brow = &rhs.data[k * n..(k + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        trace::macs(m * p * n);
        Ok(out)
    }

    /// `self * rhs^T` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != rhs.cols {
            return Err(shape_err("matmul_nt", self, rhs));
        }
        let (m, p, n) = (self.rows, self.cols, rhs.rows);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            let arow = &self.data[i * p..(i + 1) * p];
            for j in 0..n {
                let brow = &rhs.data[j * p..(j + 1) * p];
                let mut acc = T::zero();
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.data[i * n + j] = acc;
            }
        }
        trace::macs(m * p * n);
        Ok(out)
    }

    /// Matrix-vector product `self * v`.
    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols != v.len() {
            return Err(invalid(format!(
                "matvec: {}x{} times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let out = (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect();
        trace::macs(self.rows * self.cols);
        Ok(out)
    }

    /// Multiplies every entry by `s` in place.
    pub fn scale_mut(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
        trace::muls(self.data.len());
    }

    /// Elementwise sum with a matrix of the same shape, in place.
    pub fn add_assign(&mut self, rhs: &Matrix<T>) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(shape_err("add", self, rhs));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        trace::adds(self.data.len());
        Ok(())
    }

    /// Adds `s` to every entry in place.
    pub fn add_scalar_mut(&mut self, s: T) {
        for v in &mut self.data {
            *v += s;
        }
        trace::adds(self.data.len());
    }

    /// Adds `bias[r]` to every entry of row `r`.
    pub fn add_row_broadcast(&mut self, bias: &[T]) -> Result<()> {
        if bias.len() != self.rows {
            return Err(invalid(format!(
                "row broadcast of {} values onto {} rows",
                bias.len(),
                self.rows
            )));
        }
        let n = self.cols;
        for (r, &b) in bias.iter().enumerate() {
            for v in &mut self.data[r * n..(r + 1) * n] {
                *v += b;
            }
        }
        trace::adds(self.data.len());
        Ok(())
    }

    /// Multiplies column `c` by `s[c]`.
    pub fn scale_columns_mut(&mut self, s: &[T]) -> Result<()> {
        if s.len() != self.cols {
            return Err(invalid(format!(
                "column scaling of {} values onto {} columns",
                s.len(),
                self.cols
            )));
        }
        for row in self.data.chunks_mut(self.cols.max(1)) {
            for (v, &f) in row.iter_mut().zip(s) {
                *v *= f;
            }
        }
        trace::muls(self.data.len());
        Ok(())
    }

    /// Multiplies row `r` by `s[r]`.
    pub fn scale_rows_mut(&mut self, s: &[T]) -> Result<()> {
        if s.len() != self.rows {
            return Err(invalid(format!(
                "row scaling of {} values onto {} rows",
                s.len(),
                self.rows
            )));
        }
        let n = self.cols;
        for (r, &f) in s.iter().enumerate() {
            for v in &mut self.data[r * n..(r + 1) * n] {
                *v *= f;
            }
        }
        trace::muls(self.data.len());
        Ok(())
    }

    pub fn row_sums(&self) -> Vec<T> {
        trace::adds(self.data.len());
        (0..self.rows).map(|r| self.row(r).iter().copied().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for row in self.data.chunks(self.cols.max(1)) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        trace::adds(self.data.len());
        out
    }

    /// l2 norm of every column: one square and one add per entry, one
    /// square root per column.
    pub fn column_norms(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for row in self.data.chunks(self.cols.max(1)) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v * v;
            }
        }
        trace::muls(self.data.len());
        trace::adds(self.data.len());
        trace::sqrts(self.cols);
        out.iter().map(|v| v.sqrt()).collect()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Matrix<T>) -> T {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// `||self - reference||_F / ||reference||_F`, falling back to the
    /// absolute error when the reference is zero.
    pub fn relative_error(&self, reference: &Matrix<T>) -> f64 {
        assert_eq!(self.shape(), reference.shape(), "relative_error shape mismatch");
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (&a, &b) in self.data.iter().zip(&reference.data) {
            let (a, b) = (a.as_f64(), b.as_f64());
            num += (a - b) * (a - b);
            den += b * b;
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Uncounted elementwise map, for test and setup code.
    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Uncounted `self - rhs`, for test and setup code.
    pub fn sub(&self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        )
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

fn shape_err<T>(op: &str, a: &Matrix<T>, b: &Matrix<T>) -> crate::error::FsaError {
    invalid(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}
