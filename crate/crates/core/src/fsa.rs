//! Frequency self-attention: the dot-product and normalized linear forms
//! evaluated on `k^2` low-frequency tokens, with a single expansion back to
//! the spatial grid at the end.

use std::sync::Once;

use rayon::prelude::*;

use crate::attention::{inverse_column_norms, token_map, AttentionParams};
use crate::error::{invalid, Result};
use crate::feature::FeatureMap;
use crate::linalg::{Matrix, Real};
use crate::projection::{devectorize, project_lowfreq, projection, vectorize, ProjectionMatrix, TokenMatrix};

/// Which frequency-domain form to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FsaVariant {
    /// `(W_v f')(W_k f')^T (W_q f') P^T / N`.
    #[default]
    Dot,
    /// Normalized linear form with per-token key/query norms.
    Lin,
}

impl std::str::FromStr for FsaVariant {
    type Err = crate::error::FsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(FsaVariant::Dot),
            "lin" => Ok(FsaVariant::Lin),
            other => Err(invalid(format!("unknown variant '{other}' (expected dot or lin)"))),
        }
    }
}

impl std::fmt::Display for FsaVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FsaVariant::Dot => "dot",
            FsaVariant::Lin => "lin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsaConfig {
    pub k: usize,
    pub variant: FsaVariant,
    /// Number of times the module is applied, sharing one parameter set.
    pub recurrence: usize,
    /// Add each pass's output back onto its input.
    pub residual: bool,
}

impl FsaConfig {
    pub fn new(k: usize, variant: FsaVariant) -> Self {
        FsaConfig {
            k,
            variant,
            recurrence: 1,
            residual: false,
        }
    }

    pub fn with_recurrence(mut self, r: usize) -> Self {
        self.recurrence = r;
        self
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.k == 0 || self.k > height.min(width) {
            return Err(invalid(format!(
                "k={} must be in 1..={} for a {height}x{width} map",
                self.k,
                height.min(width)
            )));
        }
        if self.recurrence == 0 {
            return Err(invalid("recurrence count must be at least 1"));
        }
        Ok(())
    }
}

/// Whether the three-factor chain `A B^T C` (with `A: d_v x m`, `B, C:
/// d_k x m`) is cheaper as `A (B^T C)` than as `(A B^T) C`. Ties go to
/// the similarity-first order.
pub fn similarity_first(tokens: usize, d_k: usize, d_v: usize) -> bool {
    let m = tokens as u128;
    m * m * (d_k + d_v) as u128 <= 2 * m * (d_k * d_v) as u128
}

/// `a b^T c` in the cheaper association.
fn chain<T: Real>(a: &Matrix<T>, b: &Matrix<T>, c: &Matrix<T>) -> Result<Matrix<T>> {
    if similarity_first(b.cols(), b.rows(), a.rows()) {
        a.matmul(&b.matmul_tn(c)?)
    } else {
        a.matmul_nt(b)?.matmul(c)
    }
}

fn warn_biases<T: Real>(params: &AttentionParams<T>) {
    static ONCE: Once = Once::new();
    if params.has_biases() {
        ONCE.call_once(|| {
            eprintln!("warning: frequency attention ignores token-mapping biases");
        });
    }
}

fn check_input<T: Real>(x: &TokenMatrix<T>, p: &ProjectionMatrix<T>, params: &AttentionParams<T>) -> Result<()> {
    if x.tokens() != p.spatial_tokens() {
        return Err(invalid(format!(
            "{} tokens do not match a {}x{} projection",
            x.tokens(),
            p.height(),
            p.width()
        )));
    }
    if x.channels() != params.channels() {
        return Err(invalid(format!(
            "input has {} channels, parameters expect {}",
            x.channels(),
            params.channels()
        )));
    }
    Ok(())
}

/// Frequency tokens `f' = X' P` mapped to `(W_q f', W_k f', W_v f')`.
fn frequency_tokens<T: Real>(
    x: &TokenMatrix<T>,
    p: &ProjectionMatrix<T>,
    params: &AttentionParams<T>,
) -> Result<(TokenMatrix<T>, TokenMatrix<T>, TokenMatrix<T>)> {
    check_input(x, p, params)?;
    warn_biases(params);
    let f = project_lowfreq(x, p)?;
    token_map(&f, &params.without_biases())
}

/// FsaNet-Dot: `O' = (W_v f')(W_k f')^T (W_q f') / N * P^T`.
///
/// Everything before the final `P^T` works on `k^2` tokens.
pub fn fsa_dot<T: Real>(
    x: &TokenMatrix<T>,
    p: &ProjectionMatrix<T>,
    params: &AttentionParams<T>,
) -> Result<TokenMatrix<T>> {
    let (q, k, v) = frequency_tokens(x, p, params)?;
    let mut z = chain(v.values(), k.values(), q.values())?;
    z.scale_mut(T::of(1.0 / p.spatial_tokens() as f64));
    let out = z.matmul_nt(p.values())?;
    TokenMatrix::new(out, (p.height(), p.width()))
}

/// FsaNet-Lin:
/// `O' = (V_f M K_f^T Q_f P^T diag(l_q) + V_f P^T 1 1^T) / N` with
/// `M = P^T diag(l_k) P`, where `l_k`, `l_q` are the inverse column norms of
/// `K_f P^T` and `Q_f P^T`.
pub fn fsa_lin<T: Real>(
    x: &TokenMatrix<T>,
    p: &ProjectionMatrix<T>,
    params: &AttentionParams<T>,
) -> Result<TokenMatrix<T>> {
    let (q, k, v) = frequency_tokens(x, p, params)?;
    let n = p.spatial_tokens();

    let lambda_k = {
        let kx = k.values().matmul_nt(p.values())?;
        inverse_column_norms(&kx, "key")?
    };
    let mut lambda_q = {
        let qx = q.values().matmul_nt(p.values())?;
        inverse_column_norms(&qx, "query")?
    };

    let mut pt = p.transpose();
    pt.scale_columns_mut(&lambda_k)?;
    let m = pt.matmul(p.values())?;
    drop(pt);
    let a = v.values().matmul(&m)?;
    let z = chain(&a, k.values(), q.values())?;

    let mut y = z.matmul_nt(p.values())?;
    let inv_n = T::of(1.0 / n as f64);
    for l in &mut lambda_q {
        *l *= inv_n;
    }
    crate::trace::muls(n);
    y.scale_columns_mut(&lambda_q)?;

    // 11^T term: every output column receives W_v f' P^T 1 / N.
    let mut g = v.values().matvec(p.column_sums())?;
    for gi in &mut g {
        *gi *= inv_n;
    }
    crate::trace::muls(g.len());
    y.add_row_broadcast(&g)?;
    TokenMatrix::new(y, (p.height(), p.width()))
}

/// Runs one variant on spatial tokens.
pub fn fsa_tokens<T: Real>(
    x: &TokenMatrix<T>,
    p: &ProjectionMatrix<T>,
    params: &AttentionParams<T>,
    variant: FsaVariant,
) -> Result<TokenMatrix<T>> {
    match variant {
        FsaVariant::Dot => fsa_dot(x, p, params),
        FsaVariant::Lin => fsa_lin(x, p, params),
    }
}

/// Vectorize, apply the module `cfg.recurrence` times (adding the input back
/// when `cfg.residual`), devectorize.
pub fn fsa_apply<T: Real>(x: &FeatureMap<T>, cfg: &FsaConfig, params: &AttentionParams<T>) -> Result<FeatureMap<T>> {
    let (c, h, w) = x.dims();
    cfg.validate(h, w)?;
    if (cfg.residual || cfg.recurrence > 1) && params.d_v() != c {
        return Err(invalid(format!(
            "residual or recurrent use needs d_v == C, got d_v={} and C={c}",
            params.d_v()
        )));
    }
    let p = projection::<T>(h, w, cfg.k)?;
    let mut tokens = vectorize(x);
    for _ in 0..cfg.recurrence {
        let mut out = fsa_tokens(&tokens, &p, params, cfg.variant)?;
        if cfg.residual {
            out.values_mut().add_assign(tokens.values())?;
        }
        tokens = out;
    }
    devectorize(&tokens, h, w)
}

/// [`fsa_apply`] over a batch. `threads == 1` runs sequentially on the
/// calling thread; otherwise maps are processed on a pool of that size
/// (`0` picks the rayon default). Output order follows input order.
pub fn fsa_apply_batch<T: Real>(
    batch: &[FeatureMap<T>],
    cfg: &FsaConfig,
    params: &AttentionParams<T>,
    threads: usize,
) -> Result<Vec<FeatureMap<T>>> {
    if threads == 1 {
        return batch.iter().map(|x| fsa_apply(x, cfg, params)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    pool.install(|| batch.par_iter().map(|x| fsa_apply(x, cfg, params)).collect())
}
