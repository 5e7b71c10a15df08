//! Frequency-domain self-attention.
//!
//! Feature maps are low-pass filtered with a truncated 2D DCT and attention
//! is evaluated on the `k^2` retained coefficients instead of the `H*W`
//! spatial positions. [`fsa::fsa_dot`] and [`fsa::fsa_lin`] produce the same
//! output as filtering explicitly and running spatial attention
//! ([`attention::lowpass_then_attend`]) at a fraction of the cost.

pub mod accounting;
pub mod attention;
mod cache;
pub mod dct;
pub mod error;
pub mod feature;
pub mod fsa;
pub mod linalg;
pub mod projection;
pub mod synth;
pub mod tensorfile;
pub mod trace;

pub use attention::{AttentionParams, Normalization, Variant};
pub use error::{FsaError, Result};
pub use feature::FeatureMap;
pub use fsa::{fsa_apply, fsa_dot, fsa_lin, FsaConfig, FsaVariant};
pub use linalg::{Matrix, Precision, Real};
pub use projection::{ProjectionMatrix, TokenMatrix};
pub use trace::MacConvention;
