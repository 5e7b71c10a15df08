//! Seeded test data: uniform matrices, attention parameters and 1/f
//! ("pink") feature maps.
//!
//! All randomness comes from a ChaCha20 stream seeded with
//! `ChaCha20Rng::seed_from_u64(seed)`. ChaCha20 is a counter-mode
//! generator, so the stream for a given seed is fixed across platforms.
//! Values are drawn in a fixed order (row-major, parameters in
//! `W_q, W_k, W_v` order) and converted from `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::attention::AttentionParams;
use crate::dct::{dct_basis, inverse_channel};
use crate::feature::FeatureMap;
use crate::linalg::{Matrix, Real};

pub type SeededRng = ChaCha20Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn uniform_matrix<T: Real>(rng: &mut SeededRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(lo..hi)))
}

/// Feature map with entries uniform in `[-1, 1)`.
pub fn uniform_map<T: Real>(rng: &mut SeededRng, c: usize, h: usize, w: usize) -> FeatureMap<T> {
    FeatureMap::from_fn(c, h, w, |_, _, _| T::of(rng.random_range(-1.0..1.0)))
}

/// Bias-free parameters with weights uniform in `[-1/sqrt(C), 1/sqrt(C))`.
pub fn random_params<T: Real>(rng: &mut SeededRng, c: usize, d_k: usize, d_v: usize) -> AttentionParams<T> {
    let s = 1.0 / (c.max(1) as f64).sqrt();
    let wq = uniform_matrix(rng, d_k, c, -s, s);
    let wk = uniform_matrix(rng, d_k, c, -s, s);
    let wv = uniform_matrix(rng, d_v, c, -s, s);
    AttentionParams::new(wq, wk, wv).expect("consistent parameter shapes")
}

/// Same as [`random_params`] plus biases uniform in `[-s, s)`.
pub fn random_params_with_biases<T: Real>(
    rng: &mut SeededRng,
    c: usize,
    d_k: usize,
    d_v: usize,
    s: f64,
) -> AttentionParams<T> {
    let p = random_params(rng, c, d_k, d_v);
    let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(rng.random_range(-s..s))).collect() };
    let (bq, bk, bv) = (draw(d_k), draw(d_k), draw(d_v));
    p.with_biases(Some(bq), Some(bk), Some(bv))
        .expect("consistent bias shapes")
}

/// Channel-wise 1/f noise: every DCT coefficient `(u, v)` of every channel
/// is `g / (1 + sqrt(u^2 + v^2))` with `g` uniform in `[-1, 1)`, mapped back
/// with the full inverse transform. Mimics the spectral decay of CNN
/// features.
pub fn pink_noise_map<T: Real>(rng: &mut SeededRng, c: usize, h: usize, w: usize) -> FeatureMap<T> {
    let dh = dct_basis::<f64>(h, h).expect("positive height");
    let dw = dct_basis::<f64>(w, w).expect("positive width");
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        let coef = Matrix::from_fn(h, w, |u, v| {
            let radial = ((u * u + v * v) as f64).sqrt();
            rng.random_range(-1.0..1.0) / (1.0 + radial)
        });
        let x = inverse_channel(&coef, dh.values(), dw.values()).expect("basis shapes");
        data.extend(x.as_slice().iter().map(|&v| T::of(v)));
    }
    FeatureMap::from_vec(c, h, w, data).expect("pink noise shape")
}
