//! Orthonormal DCT-II bases and the per-channel low-frequency transform pair.
//!
//! Column `j` of the `n x k` basis is
//! `s_j * cos(pi / n * (i + 1/2) * j)` with `s_0 = sqrt(1/n)` and
//! `s_j = sqrt(2/n)` otherwise, so the columns are orthonormal and the
//! transform `D^T x` has inverse `D (D^T x)` at full rank.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::cache;
use crate::error::{invalid, Result};
use crate::feature::FeatureMap;
use crate::linalg::{Matrix, Real};

/// The `k` lowest-frequency orthonormal DCT-II basis vectors of length `n`,
/// stored as the columns of an `n x k` matrix.
#[derive(Debug, Clone)]
pub struct DctBasis<T: Real> {
    n: usize,
    k: usize,
    values: Matrix<T>,
}

impl<T: Real> DctBasis<T> {
    /// Builds the basis without touching the cache.
    pub fn new(n: usize, k: usize) -> Result<Self> {
        check_k(n, k)?;
        let values = Matrix::from_fn(n, k, |i, j| T::of(basis_entry(n, i, j)));
        Ok(DctBasis { n, k, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }
}

/// Entry `(i, j)` of the orthonormal DCT-II basis of length `n`, in `f64`.
pub fn basis_entry(n: usize, i: usize, j: usize) -> f64 {
    let n_f = n as f64;
    let scale = if j == 0 {
        (1.0 / n_f).sqrt()
    } else {
        (2.0 / n_f).sqrt()
    };
    scale * (PI / n_f * (i as f64 + 0.5) * j as f64).cos()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("DCT length must be positive"));
    }
    if k == 0 || k > n {
        return Err(invalid(format!(
            "retained frequency count k={k} must lie in 1..={n}"
        )));
    }
    Ok(())
}

/// Cached `D_{n,k}`. Built once per `(precision, n, k)` for the process.
pub fn dct_basis<T: Real>(n: usize, k: usize) -> Result<Arc<DctBasis<T>>> {
    check_k(n, k)?;
    cache::get_or_try_build("dct_basis", [n, k, 0], || DctBasis::new(n, k))
}

/// Low-frequency coefficients `f`, one `k x k` block per channel.
#[derive(Clone, PartialEq)]
pub struct FreqBlock<T> {
    channels: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Real> std::fmt::Debug for FreqBlock<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FreqBlock {}x{}x{}", self.channels, self.k, self.k)
    }
}

impl<T: Real> FreqBlock<T> {
    pub fn from_vec(channels: usize, k: usize, data: Vec<T>) -> Result<Self> {
        if channels * k * k != data.len() {
            return Err(invalid(format!(
                "{channels}x{k}x{k} block needs {} values, got {}",
                channels * k * k,
                data.len()
            )));
        }
        Ok(FreqBlock { channels, k, data })
    }

    pub fn zeros(channels: usize, k: usize) -> Self {
        FreqBlock {
            channels,
            k,
            data: vec![T::zero(); channels * k * k],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, c: usize, u: usize, v: usize) -> T {
        self.data[(c * self.k + u) * self.k + v]
    }

    pub fn channel_matrix(&self, c: usize) -> Matrix<T> {
        let n = self.k * self.k;
        Matrix::from_vec(self.k, self.k, self.data[c * n..(c + 1) * n].to_vec())
            .expect("block shape")
    }

    pub fn max_abs_diff(&self, other: &FreqBlock<T>) -> T {
        assert_eq!((self.channels, self.k), (other.channels, other.k));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// `D_H^T X D_W` for one channel, with `D_H` of shape `H x a` and `D_W` of
/// shape `W x b`; the result is `a x b`.
pub(crate) fn forward_channel<T: Real>(
    x: &Matrix<T>,
    dh: &Matrix<T>,
    dw: &Matrix<T>,
) -> Result<Matrix<T>> {
    dh.matmul_tn(x)?.matmul(dw)
}

/// `D_H F D_W^T` for one channel.
pub(crate) fn inverse_channel<T: Real>(
    f: &Matrix<T>,
    dh: &Matrix<T>,
    dw: &Matrix<T>,
) -> Result<Matrix<T>> {
    dh.matmul(f)?.matmul_nt(dw)
}

/// The low-frequency 2D-DCT: every channel of `x` is mapped to
/// `D_{H,k}^T X[c] D_{W,k}`.
pub fn dct2d_lowfreq<T: Real>(x: &FeatureMap<T>, k: usize) -> Result<FreqBlock<T>> {
    let (c, h, w) = x.dims();
    if k == 0 || k > h.min(w) {
        return Err(invalid(format!(
            "k={k} must lie in 1..={} for a {h}x{w} map",
            h.min(w)
        )));
    }
    let dh = dct_basis::<T>(h, k)?;
    let dw = dct_basis::<T>(w, k)?;
    let mut data = Vec::with_capacity(c * k * k);
    for ch in 0..c {
        let coef = forward_channel(&x.channel_matrix(ch), dh.values(), dw.values())?;
        data.extend_from_slice(coef.as_slice());
    }
    FreqBlock::from_vec(c, k, data)
}

/// Zero-padded inverse: every channel of `f` is mapped to
/// `D_{H,k} f[c] D_{W,k}^T`.
pub fn idct2d_pad<T: Real>(f: &FreqBlock<T>, height: usize, width: usize) -> Result<FeatureMap<T>> {
    let k = f.k();
    if k == 0 || k > height.min(width) {
        return Err(invalid(format!(
            "k={k} must lie in 1..={} for a {height}x{width} map",
            height.min(width)
        )));
    }
    let dh = dct_basis::<T>(height, k)?;
    let dw = dct_basis::<T>(width, k)?;
    let mut data = Vec::with_capacity(f.channels() * height * width);
    for ch in 0..f.channels() {
        let x = inverse_channel(&f.channel_matrix(ch), dh.values(), dw.values())?;
        data.extend_from_slice(x.as_slice());
    }
    FeatureMap::from_vec(f.channels(), height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Coefficient `(u, v)` of one channel by the direct double cosine sum.
    fn brute_coef(x: &FeatureMap<f64>, c: usize, u: usize, v: usize) -> f64 {
        let (_, h, w) = x.dims();
        let su = if u == 0 { (1.0 / h as f64).sqrt() } else { (2.0 / h as f64).sqrt() };
        let sv = if v == 0 { (1.0 / w as f64).sqrt() } else { (2.0 / w as f64).sqrt() };
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                acc += x.get(c, i, j)
                    * (PI / h as f64 * (i as f64 + 0.5) * u as f64).cos()
                    * (PI / w as f64 * (j as f64 + 0.5) * v as f64).cos();
            }
        }
        su * sv * acc
    }

    fn lcg_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        FeatureMap::from_fn(c, h, w, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn gram_error(b: &DctBasis<f64>) -> f64 {
        let g = b.values().matmul_tn(b.values()).unwrap();
        g.max_abs_diff(&Matrix::identity(b.k()))
    }

    #[test]
    fn single_point_basis() {
        let b = DctBasis::<f64>::new(1, 1).unwrap();
        assert_eq!(b.values().as_slice(), &[1.0]);
    }

    #[test]
    fn two_point_basis() {
        let b = DctBasis::<f64>::new(2, 2).unwrap();
        let r = 0.5f64.sqrt();
        let expected = [r, r, r, -r];
        for (v, e) in b.values().as_slice().iter().zip(expected) {
            assert!((v - e).abs() < 1e-5, "{v} vs {e}");
        }
        assert!(gram_error(&b) < 1e-12);
    }

    #[test]
    fn eight_by_three_is_orthonormal() {
        let b = DctBasis::<f64>::new(8, 3).unwrap();
        assert_eq!(b.values().shape(), (8, 3));
        assert!(gram_error(&b) < 1e-6);
        // DC column is constant and positive.
        let dc = b.values().column(0);
        assert!(dc.iter().all(|&v| (v - dc[0]).abs() < 1e-15 && v > 0.0));
    }

    #[test]
    fn invalid_sizes() {
        assert!(DctBasis::<f64>::new(0, 0).is_err());
        assert!(DctBasis::<f64>::new(3, 4).is_err());
        assert!(DctBasis::<f64>::new(3, 0).is_err());
        assert!(dct_basis::<f32>(2, 3).is_err());
    }

    #[test]
    fn cache_returns_same_instance() {
        let a = dct_basis::<f64>(13, 5).unwrap();
        let b = dct_basis::<f64>(13, 5).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let handles: Vec<_> = (0..8)
            .map(|_| std::thread::spawn(|| dct_basis::<f32>(29, 7).unwrap()))
            .collect();
        let all: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(all.windows(2).all(|w| Arc::ptr_eq(&w[0], &w[1])));
    }

    #[test]
    fn orthonormal_up_to_64() {
        for n in 1..=64 {
            let b = DctBasis::<f64>::new(n, n).unwrap();
            assert!(gram_error(&b) <= 1e-6, "n={n}");
            let b32 = DctBasis::<f32>::new(n, n).unwrap();
            let g = b32.values().matmul_tn(b32.values()).unwrap();
            assert!(g.max_abs_diff(&Matrix::identity(n)) <= 1e-4, "f32 n={n}");
        }
    }

    #[test]
    fn constant_map_has_only_dc() {
        let a = 1.75;
        let x = FeatureMap::from_fn(2, 5, 7, |_, _, _| a);
        for k in 1..=5 {
            let f = dct2d_lowfreq(&x, k).unwrap();
            for c in 0..2 {
                for u in 0..k {
                    for v in 0..k {
                        let expected = if u == 0 && v == 0 { a * 35f64.sqrt() } else { 0.0 };
                        assert!((f.get(c, u, v) - expected).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn full_rank_preserves_energy_and_round_trips() {
        let x = lcg_map(3, 6, 6, 7);
        let f = dct2d_lowfreq(&x, 6).unwrap();
        let ef: f64 = f.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ef - x.frobenius_norm()).abs() < 1e-10);
        let back = idct2d_pad(&f, 6, 6).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn lowfreq_matches_brute_force_crop() {
        let x = lcg_map(1, 4, 4, 11);
        let f = dct2d_lowfreq(&x, 2).unwrap();
        for u in 0..2 {
            for v in 0..2 {
                assert!((f.get(0, u, v) - brute_coef(&x, 0, u, v)).abs() < 1e-12);
            }
        }
        // Non-square too.
        let x = lcg_map(2, 3, 5, 12);
        let f = dct2d_lowfreq(&x, 3).unwrap();
        for c in 0..2 {
            for u in 0..3 {
                for v in 0..3 {
                    assert!((f.get(c, u, v) - brute_coef(&x, c, u, v)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_block_reconstructs_zero() {
        let f = FreqBlock::<f64>::zeros(2, 3);
        let x = idct2d_pad(&f, 4, 5).unwrap();
        assert!(x.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_is_subspace_projection() {
        let (h, w, k) = (6, 6, 3);
        let x = lcg_map(1, h, w, 5);
        let low = idct2d_pad(&dct2d_lowfreq(&x, k).unwrap(), h, w).unwrap();
        // Explicit projector onto span{ d_u d_v^T : u, v < k } from outer products.
        let mut proj = vec![0.0; h * w];
        let mut atoms = Vec::new();
        for u in 0..k {
            for v in 0..k {
                let atom: Vec<f64> = (0..h * w)
                    .map(|m| basis_entry(h, m / w, u) * basis_entry(w, m % w, v))
                    .collect();
                let coef: f64 = atom.iter().zip(x.channel(0)).map(|(a, b)| a * b).sum();
                for (p, a) in proj.iter_mut().zip(&atom) {
                    *p += coef * a;
                }
                atoms.push(atom);
            }
        }
        for (a, b) in low.channel(0).iter().zip(&proj) {
            assert!((a - b).abs() < 1e-10);
        }
        let residual: Vec<f64> = x.channel(0).iter().zip(low.channel(0)).map(|(a, b)| a - b).collect();
        for atom in &atoms {
            let ip: f64 = atom.iter().zip(&residual).map(|(a, b)| a * b).sum();
            assert!(ip.abs() <= 1e-6);
        }
    }

    #[test]
    fn out_of_range_k() {
        let x = FeatureMap::<f64>::zeros(1, 3, 4);
        assert!(dct2d_lowfreq(&x, 4).is_err());
        assert!(dct2d_lowfreq(&x, 0).is_err());
        assert!(idct2d_pad(&FreqBlock::<f64>::zeros(1, 4), 3, 4).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn lowpass_is_idempotent(h in 1usize..10, w in 1usize..10, seed in any::<u64>(), kf in 0.0f64..1.0) {
            let k = 1 + ((h.min(w) - 1) as f64 * kf) as usize;
            let x = lcg_map(2, h, w, seed);
            let f = dct2d_lowfreq(&x, k).unwrap();
            let again = dct2d_lowfreq(&idct2d_pad(&f, h, w).unwrap(), k).unwrap();
            prop_assert!(again.max_abs_diff(&f) < 1e-10);
        }

        #[test]
        fn lowpass_never_adds_energy(h in 1usize..10, w in 1usize..10, seed in any::<u64>(), kf in 0.0f64..1.0) {
            let k = 1 + ((h.min(w) - 1) as f64 * kf) as usize;
            let x = lcg_map(2, h, w, seed);
            let low = idct2d_pad(&dct2d_lowfreq(&x, k).unwrap(), h, w).unwrap();
            prop_assert!(low.frobenius_norm() <= x.frobenius_norm() + 1e-12);
        }

        #[test]
        fn transform_is_linear(h in 1usize..8, w in 1usize..8, s1 in any::<u64>(), s2 in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let k = h.min(w);
            let x = lcg_map(1, h, w, s1);
            let y = lcg_map(1, h, w, s2);
            let lhs = dct2d_lowfreq(&x.combine(a, &y, b), k).unwrap();
            let fx = dct2d_lowfreq(&x, k).unwrap();
            let fy = dct2d_lowfreq(&y, k).unwrap();
            let rhs: Vec<f64> = fx.as_slice().iter().zip(fy.as_slice()).map(|(p, q)| a * p + b * q).collect();
            for (l, r) in lhs.as_slice().iter().zip(&rhs) {
                prop_assert!((l - r).abs() < 1e-10);
            }
        }
    }
}
