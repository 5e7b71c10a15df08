//! Spatial-domain attention: token mapping, the softmax reference and its
//! linearized forms, and the low-pass-then-attend reference path.
//!
//! Tokens are columns. `Q = W_q X' + B_q` and likewise for `K` and `V`;
//! every attention map is `N x N` with column `j` holding the weights of
//! query `j` over all keys. No logit temperature is applied.

use crate::error::{invalid, FsaError, Result};
use crate::linalg::{Matrix, Real};
use crate::projection::{project_lowfreq, reconstruct, ProjectionMatrix, TokenMatrix};
use crate::trace;

/// Denominators and norms below this magnitude are rejected.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Token-mapping weights `W_q, W_k` (`d_k x C`), `W_v` (`d_v x C`) and
/// optional biases.
#[derive(Debug, Clone)]
pub struct AttentionParams<T: Real> {
    w_q: Matrix<T>,
    w_k: Matrix<T>,
    w_v: Matrix<T>,
    b_q: Option<Vec<T>>,
    b_k: Option<Vec<T>>,
    b_v: Option<Vec<T>>,
}

impl<T: Real> AttentionParams<T> {
    /// Bias-free parameters. `d_v` must equal either `C` or `d_k`.
    pub fn new(w_q: Matrix<T>, w_k: Matrix<T>, w_v: Matrix<T>) -> Result<Self> {
        let c = w_q.cols();
        if w_q.shape() != w_k.shape() {
            return Err(invalid(format!(
                "W_q is {}x{} but W_k is {}x{}",
                w_q.rows(),
                w_q.cols(),
                w_k.rows(),
                w_k.cols()
            )));
        }
        if w_v.cols() != c {
            return Err(invalid(format!(
                "W_v has {} input channels, W_q has {c}",
                w_v.cols()
            )));
        }
        if w_v.rows() != c && w_v.rows() != w_q.rows() {
            return Err(invalid(format!(
                "d_v={} must equal C={c} or d_k={}",
                w_v.rows(),
                w_q.rows()
            )));
        }
        if c == 0 || w_q.rows() == 0 {
            return Err(invalid("channel and key dimensions must be positive"));
        }
        Ok(AttentionParams {
            w_q,
            w_k,
            w_v,
            b_q: None,
            b_k: None,
            b_v: None,
        })
    }

    pub fn with_biases(
        mut self,
        b_q: Option<Vec<T>>,
        b_k: Option<Vec<T>>,
        b_v: Option<Vec<T>>,
    ) -> Result<Self> {
        for (name, b, d) in [
            ("B_q", &b_q, self.d_k()),
            ("B_k", &b_k, self.d_k()),
            ("B_v", &b_v, self.d_v()),
        ] {
            if let Some(b) = b {
                if b.len() != d {
                    return Err(invalid(format!("{name} has {} entries, expected {d}", b.len())));
                }
            }
        }
        self.b_q = b_q;
        self.b_k = b_k;
        self.b_v = b_v;
        Ok(self)
    }

    pub fn without_biases(&self) -> Self {
        AttentionParams {
            w_q: self.w_q.clone(),
            w_k: self.w_k.clone(),
            w_v: self.w_v.clone(),
            b_q: None,
            b_k: None,
            b_v: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.w_q.cols()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_v(&self) -> usize {
        self.w_v.rows()
    }

    pub fn w_q(&self) -> &Matrix<T> {
        &self.w_q
    }

    pub fn w_k(&self) -> &Matrix<T> {
        &self.w_k
    }

    pub fn w_v(&self) -> &Matrix<T> {
        &self.w_v
    }

    pub fn b_q(&self) -> Option<&[T]> {
        self.b_q.as_deref()
    }

    pub fn b_k(&self) -> Option<&[T]> {
        self.b_k.as_deref()
    }

    pub fn b_v(&self) -> Option<&[T]> {
        self.b_v.as_deref()
    }

    pub fn has_biases(&self) -> bool {
        self.b_q.is_some() || self.b_k.is_some() || self.b_v.is_some()
    }

    /// Parameters acting on permuted input channels: column `perm[i]` of each
    /// new weight is column `i` of the old one.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        let c = self.channels();
        if perm.len() != c {
            return Err(invalid("permutation length must equal C"));
        }
        let shuffle = |w: &Matrix<T>| {
            let mut out = Matrix::zeros(w.rows(), c);
            for r in 0..w.rows() {
                for (i, &p) in perm.iter().enumerate() {
                    out[(r, p)] = w[(r, i)];
                }
            }
            out
        };
        Ok(AttentionParams {
            w_q: shuffle(&self.w_q),
            w_k: shuffle(&self.w_k),
            w_v: shuffle(&self.w_v),
            b_q: self.b_q.clone(),
            b_k: self.b_k.clone(),
            b_v: self.b_v.clone(),
        })
    }
}

/// Attention weights: `N x N`, column `j` = weights of query `j`.
#[derive(Debug, Clone)]
pub struct AttentionMap<T: Real> {
    values: Matrix<T>,
}

impl<T: Real> AttentionMap<T> {
    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_values(self) -> Matrix<T> {
        self.values
    }

    pub fn tokens(&self) -> usize {
        self.values.cols()
    }

    /// Weights of query `j` over all keys.
    pub fn column(&self, j: usize) -> Vec<T> {
        self.values.column(j)
    }

    pub fn column_sums(&self) -> Vec<T> {
        trace::capture(|| self.values.column_sums()).0
    }
}

/// Which spatial attention form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// `V Softmax(K^T Q)`.
    Softmax,
    /// `V K^T Q / N`.
    Dot,
    /// `V (11^T + K^T Q) rho`.
    LinSoftmax,
    /// `V (11^T + (K rho_k)^T (Q rho_q)) rho`.
    NormalizedLinSoftmax,
}

/// How the linear-softmax forms normalize each column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Normalization {
    /// Divide by the number of keys `N`.
    #[default]
    ByLength,
    /// Divide by the exact column sum, so every column sums to one.
    ExactSum,
}

fn check_qkv<T: Real>(q: &TokenMatrix<T>, k: &TokenMatrix<T>, v: &TokenMatrix<T>) -> Result<usize> {
    if q.channels() != k.channels() {
        return Err(invalid(format!(
            "Q has {} channels but K has {}",
            q.channels(),
            k.channels()
        )));
    }
    let n = q.tokens();
    if k.tokens() != n || v.tokens() != n {
        return Err(invalid(format!(
            "token counts differ: Q={}, K={}, V={}",
            n,
            k.tokens(),
            v.tokens()
        )));
    }
    if n == 0 {
        return Err(invalid("attention needs at least one token"));
    }
    Ok(n)
}

/// `Q = W_q X' + B_q`, `K = W_k X' + B_k`, `V = W_v X' + B_v`.
pub fn token_map<T: Real>(
    x: &TokenMatrix<T>,
    params: &AttentionParams<T>,
) -> Result<(TokenMatrix<T>, TokenMatrix<T>, TokenMatrix<T>)> {
    if x.channels() != params.channels() {
        return Err(invalid(format!(
            "input has {} channels, parameters expect {}",
            x.channels(),
            params.channels()
        )));
    }
    let map = |w: &Matrix<T>, b: Option<&[T]>| -> Result<TokenMatrix<T>> {
        let mut out = w.matmul(x.values())?;
        if let Some(b) = b {
            out.add_row_broadcast(b)?;
        }
        TokenMatrix::new(out, x.grid())
    };
    Ok((
        map(params.w_q(), params.b_q())?,
        map(params.w_k(), params.b_k())?,
        map(params.w_v(), params.b_v())?,
    ))
}

/// Column-wise softmax of `K^T Q`.
pub fn softmax_map<T: Real>(q: &TokenMatrix<T>, k: &TokenMatrix<T>) -> Result<AttentionMap<T>> {
    if q.channels() != k.channels() || q.tokens() != k.tokens() {
        return Err(invalid("Q and K must have the same shape"));
    }
    let mut s = k.values().matmul_tn(q.values())?;
    softmax_columns(&mut s);
    Ok(AttentionMap { values: s })
}

/// Numerically stable column softmax in place. Counts one subtract, one
/// exponential, one add and one divide per entry.
fn softmax_columns<T: Real>(s: &mut Matrix<T>) {
    let (rows, cols) = s.shape();
    let mut max = vec![T::neg_infinity(); cols];
    for r in 0..rows {
        for (m, &v) in max.iter_mut().zip(s.row(r)) {
            *m = m.max(v);
        }
    }
    let mut sum = vec![T::zero(); cols];
    for r in 0..rows {
        for ((v, &m), acc) in s.row_mut(r).iter_mut().zip(&max).zip(sum.iter_mut()) {
            *v = (*v - m).exp();
            *acc += *v;
        }
    }
    for r in 0..rows {
        for (v, &z) in s.row_mut(r).iter_mut().zip(&sum) {
            *v /= z;
        }
    }
    let n = rows * cols;
    trace::adds(2 * n);
    trace::exps(n);
    trace::divs(n);
}

/// `O' = V Softmax(K^T Q)`.
pub fn softmax_attention<T: Real>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
) -> Result<TokenMatrix<T>> {
    check_qkv(q, k, v)?;
    let a = softmax_map(q, k)?;
    TokenMatrix::new(v.values().matmul(a.values())?, q.grid())
}

/// `LinSoftmax(x)_i = (1 + x_i) / sum_j (1 + x_j)`.
pub fn linsoftmax<T: Real>(x: &[T]) -> Result<Vec<T>> {
    let shifted: Vec<T> = x.iter().map(|&v| T::one() + v).collect();
    let sum: T = shifted.iter().copied().sum();
    trace::adds(2 * x.len());
    if sum.abs().as_f64() < DEGENERACY_EPS {
        return Err(FsaError::DegenerateDenominator { sum: sum.as_f64() });
    }
    trace::divs(x.len());
    Ok(shifted.into_iter().map(|v| v / sum).collect())
}

/// `V K^T Q / N`, evaluated right to left (spatial order).
pub fn dot_attention<T: Real>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
) -> Result<TokenMatrix<T>> {
    let n = check_qkv(q, k, v)?;
    let s = k.values().matmul_tn(q.values())?;
    let mut out = v.values().matmul(&s)?;
    out.scale_mut(T::of(1.0 / n as f64));
    TokenMatrix::new(out, q.grid())
}

/// Per-column factors turning `V (11^T + S)` into the normalized output.
fn column_factors<T: Real>(unnormalized: &Matrix<T>, mode: Normalization) -> Result<Vec<T>> {
    let n = unnormalized.rows();
    match mode {
        Normalization::ByLength => Ok(vec![T::of(1.0 / n as f64); unnormalized.cols()]),
        Normalization::ExactSum => {
            let sums = unnormalized.column_sums();
            trace::divs(sums.len());
            sums.into_iter()
                .map(|s| {
                    if s.abs().as_f64() < DEGENERACY_EPS {
                        Err(FsaError::DegenerateDenominator { sum: s.as_f64() })
                    } else {
                        Ok(T::one() / s)
                    }
                })
                .collect()
        }
    }
}

fn apply_factors<T: Real>(out: &mut Matrix<T>, factors: &[T], mode: Normalization) -> Result<()> {
    match mode {
        Normalization::ByLength => {
            out.scale_mut(factors[0]);
            Ok(())
        }
        Normalization::ExactSum => out.scale_columns_mut(factors),
    }
}

/// Linearized map `(11^T + K^T Q) rho`.
pub fn linsoftmax_map<T: Real>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    mode: Normalization,
) -> Result<AttentionMap<T>> {
    if q.channels() != k.channels() || q.tokens() != k.tokens() || q.tokens() == 0 {
        return Err(invalid("Q and K must have the same non-empty shape"));
    }
    let mut a = k.values().matmul_tn(q.values())?;
    a.add_scalar_mut(T::one());
    let f = column_factors(&a, mode)?;
    match mode {
        Normalization::ByLength => a.scale_mut(f[0]),
        Normalization::ExactSum => a.scale_columns_mut(&f)?,
    }
    Ok(AttentionMap { values: a })
}

/// `O' = V (11^T + K^T Q) rho`; with [`Normalization::ByLength`] this is
/// `V 11^T / N + V K^T Q / N`.
pub fn linsoftmax_attention<T: Real>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
    mode: Normalization,
) -> Result<TokenMatrix<T>> {
    check_qkv(q, k, v)?;
    let mut a = k.values().matmul_tn(q.values())?;
    a.add_scalar_mut(T::one());
    let f = column_factors(&a, mode)?;
    let mut out = v.values().matmul(&a)?;
    apply_factors(&mut out, &f, mode)?;
    TokenMatrix::new(out, q.grid())
}

/// `1 / ||column||_2` for every column, rejecting zero-norm columns.
pub(crate) fn inverse_column_norms<T: Real>(m: &Matrix<T>, which: &'static str) -> Result<Vec<T>> {
    let norms = m.column_norms();
    trace::divs(norms.len());
    norms
        .into_iter()
        .enumerate()
        .map(|(index, nrm)| {
            if nrm.as_f64() < DEGENERACY_EPS {
                Err(FsaError::ZeroNormColumn {
                    which,
                    index,
                    norm: nrm.as_f64(),
                })
            } else {
                Ok(T::one() / nrm)
            }
        })
        .collect()
}

/// Cosine-similarity block `(K rho_k)^T (Q rho_q)`.
pub fn cosine_similarity<T: Real>(q: &TokenMatrix<T>, k: &TokenMatrix<T>) -> Result<Matrix<T>> {
    if q.channels() != k.channels() || q.tokens() != k.tokens() {
        return Err(invalid("Q and K must have the same shape"));
    }
    let lq = inverse_column_norms(q.values(), "query")?;
    let lk = inverse_column_norms(k.values(), "key")?;
    let mut qn = q.values().clone();
    qn.scale_columns_mut(&lq)?;
    let mut kn = k.values().clone();
    kn.scale_columns_mut(&lk)?;
    kn.matmul_tn(&qn)
}

/// Normalized linearized map `(11^T + (K rho_k)^T (Q rho_q)) rho`.
pub fn normalized_linsoftmax_map<T: Real>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    mode: Normalization,
) -> Result<AttentionMap<T>> {
    let mut a = cosine_similarity(q, k)?;
    a.add_scalar_mut(T::one());
    let f = column_factors(&a, mode)?;
    match mode {
        Normalization::ByLength => a.scale_mut(f[0]),
        Normalization::ExactSum => a.scale_columns_mut(&f)?,
    }
    Ok(AttentionMap { values: a })
}

/// Softmax of the cosine-similarity block.
pub fn normalized_softmax_map<T: Real>(q: &TokenMatrix<T>, k: &TokenMatrix<T>) -> Result<AttentionMap<T>> {
    let mut s = cosine_similarity(q, k)?;
    softmax_columns(&mut s);
    Ok(AttentionMap { values: s })
}

/// `O' = V [11^T + (K rho_k)^T (Q rho_q)] rho`.
pub fn normalized_linsoftmax_attention<T: Real>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
    mode: Normalization,
) -> Result<TokenMatrix<T>> {
    check_qkv(q, k, v)?;
    let mut a = cosine_similarity(q, k)?;
    a.add_scalar_mut(T::one());
    let f = column_factors(&a, mode)?;
    let mut out = v.values().matmul(&a)?;
    apply_factors(&mut out, &f, mode)?;
    TokenMatrix::new(out, q.grid())
}

/// Token mixing with the chosen variant (linear forms divide by `N`).
pub fn attend<T: Real>(
    q: &TokenMatrix<T>,
    k: &TokenMatrix<T>,
    v: &TokenMatrix<T>,
    variant: Variant,
) -> Result<TokenMatrix<T>> {
    match variant {
        Variant::Softmax => softmax_attention(q, k, v),
        Variant::Dot => dot_attention(q, k, v),
        Variant::LinSoftmax => linsoftmax_attention(q, k, v, Normalization::ByLength),
        Variant::NormalizedLinSoftmax => {
            normalized_linsoftmax_attention(q, k, v, Normalization::ByLength)
        }
    }
}

/// Token mapping followed by token mixing on spatial tokens.
pub fn spatial_attention<T: Real>(
    x: &TokenMatrix<T>,
    params: &AttentionParams<T>,
    variant: Variant,
) -> Result<TokenMatrix<T>> {
    let (q, k, v) = token_map(x, params)?;
    attend(&q, &k, &v, variant)
}

/// Reference path: low-pass filter `X'` through `P` explicitly
/// (`X_f' = X' P P^T`), then run the spatial variant on `X_f'`.
pub fn lowpass_then_attend<T: Real>(
    x: &TokenMatrix<T>,
    p: &ProjectionMatrix<T>,
    params: &AttentionParams<T>,
    variant: Variant,
) -> Result<TokenMatrix<T>> {
    let xf = reconstruct(&project_lowfreq(x, p)?, p)?;
    spatial_attention(&xf, params, variant)
}
