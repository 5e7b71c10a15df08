//! Linear maps between spatial position tokens and low-frequency tokens.
//!
//! `P` is the `(H*W) x k^2` matrix with `X' P = vec(D_{H,k}^T X D_{W,k})`,
//! row-major on both sides. Its entries are products of two basis entries:
//!
//! ```text
//! P[m, n] = D_{H,k}[m / W, n / k] * D_{W,k}[m % W, n % k]
//! ```
//!
//! `P` has orthonormal columns for any `H`, `W` (it is a row/column
//! permutation of the Kronecker product `D_{H,k} (x) D_{W,k}`), so `P^T` is
//! both the zero-padded inverse transform and a left inverse of `P`.

use std::sync::Arc;

use crate::cache;
use crate::dct::{basis_entry, dct2d_lowfreq, dct_basis, idct2d_pad, DctBasis, FreqBlock};
use crate::error::{invalid, Result};
use crate::feature::FeatureMap;
use crate::linalg::{Matrix, Real};

/// `C x N` matrix of tokens (one column per spatial position or frequency),
/// together with the 2D grid the tokens were vectorized from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix<T: Real> {
    values: Matrix<T>,
    grid: (usize, usize),
}

impl<T: Real> TokenMatrix<T> {
    pub fn new(values: Matrix<T>, grid: (usize, usize)) -> Result<Self> {
        if values.cols() != grid.0 * grid.1 {
            return Err(invalid(format!(
                "{} tokens cannot come from a {}x{} grid",
                values.cols(),
                grid.0,
                grid.1
            )));
        }
        Ok(TokenMatrix { values, grid })
    }

    /// Tokens on a `1 x N` grid.
    pub fn flat(values: Matrix<T>) -> Self {
        let n = values.cols();
        TokenMatrix { values, grid: (1, n) }
    }

    pub fn channels(&self) -> usize {
        self.values.rows()
    }

    pub fn tokens(&self) -> usize {
        self.values.cols()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Matrix<T> {
        &mut self.values
    }

    pub fn into_values(self) -> Matrix<T> {
        self.values
    }

    pub fn relative_error(&self, reference: &TokenMatrix<T>) -> f64 {
        self.values.relative_error(&reference.values)
    }

    pub fn max_abs_diff(&self, other: &TokenMatrix<T>) -> T {
        self.values.max_abs_diff(&other.values)
    }
}

/// The projection `P` for an `H x W` grid keeping `k x k` low frequencies.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix<T: Real> {
    height: usize,
    width: usize,
    k: usize,
    values: Matrix<T>,
    column_sums: Vec<T>,
}

impl<T: Real> ProjectionMatrix<T> {
    /// Wraps an explicit `(H*W) x k^2` matrix.
    pub fn from_matrix(height: usize, width: usize, k: usize, values: Matrix<T>) -> Result<Self> {
        check_dims(height, width, k)?;
        if values.shape() != (height * width, k * k) {
            return Err(invalid(format!(
                "projection for {height}x{width}, k={k} must be {}x{}, got {}x{}",
                height * width,
                k * k,
                values.rows(),
                values.cols()
            )));
        }
        let column_sums = crate::trace::capture(|| values.column_sums()).0;
        Ok(ProjectionMatrix {
            height,
            width,
            k,
            values,
            column_sums,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of spatial tokens `H * W`.
    pub fn spatial_tokens(&self) -> usize {
        self.height * self.width
    }

    /// Number of frequency tokens `k^2`.
    pub fn freq_tokens(&self) -> usize {
        self.k * self.k
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    /// `P^T 1`: the sum of each column of `P`, computed once at construction.
    pub fn column_sums(&self) -> &[T] {
        &self.column_sums
    }

    /// `G = P^T`, materialized.
    pub fn transpose(&self) -> Matrix<T> {
        self.values.transpose()
    }
}

fn check_dims(height: usize, width: usize, k: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(invalid("spatial dimensions must be positive"));
    }
    if k == 0 || k > height.min(width) {
        return Err(invalid(format!(
            "k={k} must lie in 1..={} for a {height}x{width} grid",
            height.min(width)
        )));
    }
    Ok(())
}

/// Builds `P` entry by entry from the closed form.
pub fn build_projection<T: Real>(height: usize, width: usize, k: usize) -> Result<ProjectionMatrix<T>> {
    check_dims(height, width, k)?;
    let dh: Vec<f64> = (0..height * k)
        .map(|idx| basis_entry(height, idx / k, idx % k))
        .collect();
    let dw: Vec<f64> = (0..width * k)
        .map(|idx| basis_entry(width, idx / k, idx % k))
        .collect();
    let values = Matrix::from_fn(height * width, k * k, |m, n| {
        T::of(dh[(m / width) * k + n / k] * dw[(m % width) * k + n % k])
    });
    ProjectionMatrix::from_matrix(height, width, k, values)
}

/// Cached [`build_projection`]; built once per `(precision, H, W, k)`.
pub fn projection<T: Real>(height: usize, width: usize, k: usize) -> Result<Arc<ProjectionMatrix<T>>> {
    check_dims(height, width, k)?;
    cache::get_or_try_build("projection", [height, width, k], || {
        build_projection(height, width, k)
    })
}

/// Builds `P` by probing the low-frequency transform with every spatial
/// unit impulse: reshape the `HW x HW` identity into `HW` maps, transform
/// each, crop `k x k` and vectorize. Intended as an independent check on
/// [`build_projection`].
pub fn probe_projection<T: Real>(height: usize, width: usize, k: usize) -> Result<ProjectionMatrix<T>> {
    check_dims(height, width, k)?;
    let n = height * width;
    let impulses = devectorize(&TokenMatrix::flat(Matrix::identity(n)), height, width)?;
    let coefs = dct2d_lowfreq(&impulses, k)?;
    let p = Matrix::from_vec(n, k * k, coefs.as_slice().to_vec())?;
    ProjectionMatrix::from_matrix(height, width, k, p)
}

/// Builds `G` (`k^2 x HW`) by probing the zero-padded inverse transform with
/// every frequency unit impulse.
pub fn probe_reconstruction<T: Real>(height: usize, width: usize, k: usize) -> Result<Matrix<T>> {
    check_dims(height, width, k)?;
    let kk = k * k;
    let impulses = FreqBlock::from_vec(kk, k, Matrix::<T>::identity(kk).into_vec())?;
    let maps = idct2d_pad(&impulses, height, width)?;
    Matrix::from_vec(kk, height * width, maps.into_vec())
}

/// Row-wise vectorization of every channel: `out[c, i*W + j] = X[c, i, j]`.
pub fn vectorize<T: Real>(x: &FeatureMap<T>) -> TokenMatrix<T> {
    let (c, h, w) = x.dims();
    let values = Matrix::from_vec(c, h * w, x.as_slice().to_vec()).expect("vectorize shape");
    TokenMatrix { values, grid: (h, w) }
}

/// Inverse of [`vectorize`].
pub fn devectorize<T: Real>(tokens: &TokenMatrix<T>, height: usize, width: usize) -> Result<FeatureMap<T>> {
    if tokens.tokens() != height * width {
        return Err(invalid(format!(
            "{} tokens cannot be reshaped to {height}x{width}",
            tokens.tokens()
        )));
    }
    FeatureMap::from_vec(
        tokens.channels(),
        height,
        width,
        tokens.values().as_slice().to_vec(),
    )
}

/// Linear operation 1: `f' = X' P`.
pub fn project_lowfreq<T: Real>(x: &TokenMatrix<T>, p: &ProjectionMatrix<T>) -> Result<TokenMatrix<T>> {
    if x.tokens() != p.spatial_tokens() {
        return Err(invalid(format!(
            "{} spatial tokens do not match a projection for {}x{}",
            x.tokens(),
            p.height(),
            p.width()
        )));
    }
    let f = x.values().matmul(p.values())?;
    Ok(TokenMatrix {
        values: f,
        grid: (p.k(), p.k()),
    })
}

/// Linear operation 2 (core): `X_f' = f' P^T`.
pub fn reconstruct<T: Real>(f: &TokenMatrix<T>, p: &ProjectionMatrix<T>) -> Result<TokenMatrix<T>> {
    if f.tokens() != p.freq_tokens() {
        return Err(invalid(format!(
            "{} frequency tokens do not match k={}",
            f.tokens(),
            p.k()
        )));
    }
    let x = f.values().matmul_nt(p.values())?;
    Ok(TokenMatrix {
        values: x,
        grid: (p.height(), p.width()),
    })
}

/// Which side of `D_{H,k}^T X D_{W,k}` the separable route multiplies first.
///
/// Left first costs `k*H*W + k^2*W` multiply-adds per channel, right first
/// `k*H*W + k^2*H`; the cheaper one is used, left on ties.
pub fn separable_left_first(height: usize, width: usize) -> bool {
    width <= height
}

/// Low-frequency tokens by multiplying each channel from the left and the
/// right with the truncated bases.
pub fn project_separable<T: Real>(x: &FeatureMap<T>, k: usize) -> Result<TokenMatrix<T>> {
    let (c, h, w) = x.dims();
    check_dims(h, w, k)?;
    let dh = dct_basis::<T>(h, k)?;
    let dw = dct_basis::<T>(w, k)?;
    let left_first = separable_left_first(h, w);
    let mut out = Matrix::zeros(c, k * k);
    for ch in 0..c {
        let xc = x.channel_matrix(ch);
        let coef = if left_first {
            dh.values().matmul_tn(&xc)?.matmul(dw.values())?
        } else {
            dh.values().matmul_tn(&xc.matmul(dw.values())?)?
        };
        out.row_mut(ch).copy_from_slice(coef.as_slice());
    }
    TokenMatrix::new(out, (k, k))
}

/// Low-frequency tokens by computing the complete `H x W` coefficient block
/// of every channel with full separable transforms and keeping the top-left
/// `k x k` corner.
pub fn project_fullcrop<T: Real>(x: &FeatureMap<T>, k: usize) -> Result<TokenMatrix<T>> {
    let (c, h, w) = x.dims();
    check_dims(h, w, k)?;
    let dh: Arc<DctBasis<T>> = dct_basis(h, h)?;
    let dw: Arc<DctBasis<T>> = dct_basis(w, w)?;
    let mut out = Matrix::zeros(c, k * k);
    for ch in 0..c {
        let full = dh.values().matmul_tn(&x.channel_matrix(ch))?.matmul(dw.values())?;
        let row = out.row_mut(ch);
        for u in 0..k {
            row[u * k..(u + 1) * k].copy_from_slice(&full.row(u)[..k]);
        }
    }
    TokenMatrix::new(out, (k, k))
}
