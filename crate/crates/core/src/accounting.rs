//! Analytic operation counts and a peak-memory model for the attention
//! modules and the published baselines.
//!
//! Counts for [`crate::attention`] and [`crate::fsa`] follow the kernels
//! line by line, so an instrumented run (see [`crate::trace`]) reproduces
//! them exactly. Baselines are closed-form multiply-add counts with their
//! usual constants.

use std::fmt::Write as _;

use crate::attention::{Normalization, Variant};
use crate::error::{invalid, FsaError, Result};
use crate::fsa::{similarity_first, FsaVariant};
use crate::trace::{MacConvention, OpCounts};

pub use crate::trace::measured_flops;

/// Problem size. `N = h * w` spatial tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub d_k: usize,
    pub d_v: usize,
    /// Token mapping adds biases (spatial forms only).
    pub biases: bool,
}

impl CostDims {
    /// `d_k = d_v = d`, no biases.
    pub fn new(h: usize, w: usize, c: usize, d: usize) -> Self {
        CostDims {
            h,
            w,
            c,
            d_k: d,
            d_v: d,
            biases: false,
        }
    }

    pub fn with_dv(mut self, d_v: usize) -> Self {
        self.d_v = d_v;
        self
    }

    pub fn with_biases(mut self, biases: bool) -> Self {
        self.biases = biases;
        self
    }

    pub fn tokens(&self) -> u64 {
        (self.h * self.w) as u64
    }
}

/// Raw operation counts per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageCounts {
    pub conv: OpCounts,
    pub reduce: OpCounts,
    pub mix: OpCounts,
    pub reconstruct: OpCounts,
}

impl StageCounts {
    pub fn total(&self) -> OpCounts {
        self.conv + self.reduce + self.mix + self.reconstruct
    }

    pub fn report(&self, peak_floats: Option<u64>, convention: MacConvention) -> CostReport {
        let conv_flops = self.conv.flops(convention);
        let reduce_flops = self.reduce.flops(convention);
        let mix_flops = self.mix.flops(convention);
        let reconstruct_flops = self.reconstruct.flops(convention);
        CostReport {
            conv_flops,
            reduce_flops,
            mix_flops,
            reconstruct_flops,
            total_flops: conv_flops + reduce_flops + mix_flops + reconstruct_flops,
            peak_floats,
            convention,
        }
    }
}

/// FLOPs per stage under one MAC convention, plus modelled peak memory in
/// floats (`None` where no memory model exists).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub conv_flops: u64,
    pub reduce_flops: u64,
    pub mix_flops: u64,
    pub reconstruct_flops: u64,
    pub total_flops: u64,
    pub peak_floats: Option<u64>,
    pub convention: MacConvention,
}

impl CostReport {
    /// The three-part `conv + reduce + mix` total, without reconstruction.
    pub fn three_part_flops(&self) -> u64 {
        self.conv_flops + self.reduce_flops + self.mix_flops
    }

    /// Percentage of `baseline`'s total FLOPs saved.
    pub fn reduction_vs(&self, baseline: &CostReport) -> f64 {
        100.0 * (1.0 - self.total_flops as f64 / baseline.total_flops as f64)
    }

    /// Line-oriented `key=value` text.
    pub fn to_kv(&self, method: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method={method}");
        let _ = writeln!(s, "convention={}", self.convention);
        let _ = writeln!(s, "conv_flops={}", self.conv_flops);
        let _ = writeln!(s, "reduce_flops={}", self.reduce_flops);
        let _ = writeln!(s, "mix_flops={}", self.mix_flops);
        let _ = writeln!(s, "reconstruct_flops={}", self.reconstruct_flops);
        let _ = writeln!(s, "total_flops={}", self.total_flops);
        let _ = writeln!(s, "peak_floats={}", peak_str(self.peak_floats));
        s
    }

    pub fn csv_header() -> &'static str {
        "method,convention,conv_flops,reduce_flops,mix_flops,reconstruct_flops,total_flops,peak_floats"
    }

    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{},{},{},{},{},{},{}",
            self.convention,
            self.conv_flops,
            self.reduce_flops,
            self.mix_flops,
            self.reconstruct_flops,
            self.total_flops,
            peak_str(self.peak_floats)
        )
    }
}

fn peak_str(p: Option<u64>) -> String {
    p.map_or_else(|| "na".to_string(), |v| v.to_string())
}

fn mac(n: u64) -> OpCounts {
    OpCounts {
        macs: n,
        ..OpCounts::default()
    }
}

/// `d x N` column norms followed by one reciprocal per column.
fn inverse_norms(d: u64, n: u64) -> OpCounts {
    OpCounts {
        muls: d * n,
        adds: d * n,
        sqrts: n,
        divs: n,
        ..OpCounts::default()
    }
}

fn token_map_counts(dims: &CostDims, tokens: u64, biases: bool) -> OpCounts {
    let (c, dk, dv) = (dims.c as u64, dims.d_k as u64, dims.d_v as u64);
    let mut ops = mac(tokens * c * (2 * dk + dv));
    if biases {
        ops.adds += tokens * (2 * dk + dv);
    }
    ops
}

/// Counts for token mapping plus one spatial attention variant.
pub fn spatial_counts(dims: &CostDims, variant: Variant, mode: Normalization) -> StageCounts {
    let n = dims.tokens();
    let (dk, dv) = (dims.d_k as u64, dims.d_v as u64);
    let conv = token_map_counts(dims, n, dims.biases);
    let mut mix = mac(n * n * dk + dv * n * n);
    match variant {
        Variant::Softmax => {
            mix.adds += 2 * n * n;
            mix.exps += n * n;
            mix.divs += n * n;
        }
        Variant::Dot => mix.muls += dv * n,
        Variant::LinSoftmax | Variant::NormalizedLinSoftmax => {
            if variant == Variant::NormalizedLinSoftmax {
                mix += inverse_norms(dk, n) + inverse_norms(dk, n);
                mix.muls += 2 * dk * n;
            }
            mix.adds += n * n;
            if mode == Normalization::ExactSum {
                mix.adds += n * n;
                mix.divs += n;
            }
            mix.muls += dv * n;
        }
    }
    StageCounts {
        conv,
        mix,
        ..StageCounts::default()
    }
}

pub fn cost_spatial(dims: &CostDims, variant: Variant, mode: Normalization, convention: MacConvention) -> CostReport {
    spatial_counts(dims, variant, mode).report(Some(peak_floats_spatial(dims)), convention)
}

/// Non-local block: token mapping plus softmax attention, `d_k = d_v = d`.
/// With `d = 0` nothing is computed.
pub fn cost_nonlocal(h: usize, w: usize, c: usize, d: usize, convention: MacConvention) -> CostReport {
    let dims = CostDims::new(h, w, c, d);
    if d == 0 {
        return StageCounts::default().report(Some(0), convention);
    }
    cost_spatial(&dims, Variant::Softmax, Normalization::ByLength, convention)
}

/// How the low-frequency tokens `X' P` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReduceAlgorithm {
    /// Multiply by the explicit projection matrix.
    #[default]
    Matrix,
    /// Truncated bases from both sides, per channel.
    Separable,
    /// Full transforms per channel, then crop.
    FullCrop,
}

/// Multiply-adds spent computing the `C x k^2` low-frequency tokens.
pub fn projection_counts(h: usize, w: usize, c: usize, k: usize, algorithm: ReduceAlgorithm) -> OpCounts {
    let (h, w, c, k) = (h as u64, w as u64, c as u64, k as u64);
    mac(match algorithm {
        ReduceAlgorithm::Matrix => c * h * w * k * k,
        ReduceAlgorithm::Separable => c * (k * h * w + k * k * h.min(w)),
        ReduceAlgorithm::FullCrop => c * h * w * (h + w),
    })
}

/// Multiply-adds of `A B^T C` on `m` tokens in the order the kernels use.
fn chain_macs(m: u64, d_k: u64, d_v: u64) -> u64 {
    if similarity_first(m as usize, d_k as usize, d_v as usize) {
        m * m * d_k + d_v * m * m
    } else {
        2 * d_v * d_k * m
    }
}

/// Counts for one frequency-attention pass. Biases are ignored, as in the
/// kernels.
pub fn fsa_counts(dims: &CostDims, k: usize, variant: FsaVariant, algorithm: ReduceAlgorithm) -> Result<StageCounts> {
    if k == 0 || k > dims.h.min(dims.w) {
        return Err(invalid(format!(
            "k={k} must lie in 1..={} for a {}x{} grid",
            dims.h.min(dims.w),
            dims.h,
            dims.w
        )));
    }
    let n = dims.tokens();
    let m = (k * k) as u64;
    let (dk, dv) = (dims.d_k as u64, dims.d_v as u64);
    let reduce = projection_counts(dims.h, dims.w, dims.c, k, algorithm);
    let conv = token_map_counts(dims, m, false);
    let stages = match variant {
        FsaVariant::Dot => StageCounts {
            conv,
            reduce,
            mix: mac(chain_macs(m, dk, dv)),
            reconstruct: OpCounts {
                macs: dv * m * n,
                muls: dv * m,
                ..OpCounts::default()
            },
        },
        FsaVariant::Lin => {
            let mut mix = mac(2 * dk * m * n) + inverse_norms(dk, n) + inverse_norms(dk, n);
            mix.muls += m * n;
            mix.macs += m * n * m + dv * m * m + chain_macs(m, dk, dv);
            StageCounts {
                conv,
                reduce,
                mix,
                reconstruct: OpCounts {
                    macs: dv * m * n + dv * m,
                    muls: n + dv * n + dv,
                    adds: dv * n,
                    ..OpCounts::default()
                },
            }
        }
    };
    Ok(stages)
}

/// Frequency attention with `d_k = d_v = d` and the matrix reduce.
pub fn cost_fsa(
    h: usize,
    w: usize,
    c: usize,
    d: usize,
    k: usize,
    variant: FsaVariant,
    convention: MacConvention,
) -> Result<CostReport> {
    cost_fsa_dims(&CostDims::new(h, w, c, d), k, variant, ReduceAlgorithm::Matrix, convention)
}

pub fn cost_fsa_dims(
    dims: &CostDims,
    k: usize,
    variant: FsaVariant,
    algorithm: ReduceAlgorithm,
    convention: MacConvention,
) -> Result<CostReport> {
    let stages = fsa_counts(dims, k, variant, algorithm)?;
    Ok(stages.report(Some(peak_floats_fsa(dims, k, variant)), convention))
}

fn param_floats(dims: &CostDims) -> u64 {
    let (c, dk, dv) = (dims.c as u64, dims.d_k as u64, dims.d_v as u64);
    c * (2 * dk + dv) + if dims.biases { 2 * dk + dv } else { 0 }
}

/// Input, parameters, `Q`, `K`, `V`, the `N x N` map and the output, all
/// live at once.
pub fn peak_floats_spatial(dims: &CostDims) -> u64 {
    let n = dims.tokens();
    let (c, dk, dv) = (dims.c as u64, dims.d_k as u64, dims.d_v as u64);
    c * n + param_floats(dims) + n * (2 * dk + dv) + n * n + dv * n
}

/// Input, parameters, `P`, the frequency tokens and every `k^2`-sized
/// intermediate, and the output. The normalized form adds its two `d_k x N`
/// expansions, the scaled `P^T` copy, the `k^2 x k^2` weighted Gram matrix
/// and the per-token factors.
pub fn peak_floats_fsa(dims: &CostDims, k: usize, variant: FsaVariant) -> u64 {
    let n = dims.tokens();
    let m = (k * k) as u64;
    let (c, dk, dv) = (dims.c as u64, dims.d_k as u64, dims.d_v as u64);
    let chain = if similarity_first(m as usize, dk as usize, dv as usize) {
        m * m
    } else {
        dv * dk
    };
    let base = c * n + param_floats(dims) + n * m + c * m + m * (2 * dk + dv) + chain + dv * m + dv * n;
    match variant {
        FsaVariant::Dot => base,
        FsaVariant::Lin => base + 2 * dk * n + n * m + m * m + dv * m + 2 * n + dv,
    }
}

/// Methods known to the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    NonLocal,
    CcNet,
    IsaNet,
    Ann,
    EmaNet,
    OcrNet,
    FsaDot,
    FsaLin,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::NonLocal,
        Method::CcNet,
        Method::IsaNet,
        Method::Ann,
        Method::EmaNet,
        Method::OcrNet,
        Method::FsaLin,
        Method::FsaDot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NonLocal => "nonlocal",
            Method::CcNet => "ccnet",
            Method::IsaNet => "isanet",
            Method::Ann => "ann",
            Method::EmaNet => "emanet",
            Method::OcrNet => "ocrnet",
            Method::FsaDot => "fsa-dot",
            Method::FsaLin => "fsa-lin",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = FsaError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                invalid(format!("unknown method '{s}' (known: {})", known.join(", ")))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Constants of the baseline formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineConstants {
    /// Pooled bases in the asymmetric pyramid (`1 + 9 + 36 + 64`).
    pub ann_bases: u64,
    pub ema_bases: u64,
    pub ema_iterations: u64,
    /// Object regions (classes).
    pub ocr_regions: u64,
    /// Local window size; `None` uses `round(sqrt(N))`.
    pub isa_window: Option<u64>,
}

impl Default for BaselineConstants {
    fn default() -> Self {
        BaselineConstants {
            ann_bases: 110,
            ema_bases: 64,
            ema_iterations: 3,
            ocr_regions: 19,
            isa_window: None,
        }
    }
}

/// Closed-form `conv + reduce + mix` multiply-add counts of a baseline.
/// Non-local and the frequency methods are rejected here; use
/// [`cost_method`] for those.
pub fn baseline_counts(method: Method, dims: &CostDims, consts: &BaselineConstants) -> Result<StageCounts> {
    let n = dims.tokens();
    let (h, w, c, d) = (dims.h as u64, dims.w as u64, dims.c as u64, dims.d_k as u64);
    let (conv, reduce, mix) = match method {
        Method::CcNet => (4 * n * c * d, 0, 2 * n * (h + w) * d),
        Method::IsaNet => {
            let p = consts.isa_window.unwrap_or_else(|| (n as f64).sqrt().round() as u64).max(1);
            (8 * n * c * d, 0, 2 * n * (n.div_ceil(p) + p) * d)
        }
        Method::Ann => (
            2 * n * c * d + 2 * n * c * d + 2 * n * c * c,
            4 * n * d,
            2 * n * consts.ann_bases * d,
        ),
        Method::EmaNet => (
            2 * n * c * c,
            2 * n * consts.ema_bases * consts.ema_iterations * c,
            n * consts.ema_bases * c,
        ),
        Method::OcrNet => {
            let k = consts.ocr_regions;
            (2 * n * c * d + 2 * k * c * d + 2 * n * c * c, n * k * c, 2 * n * k * d)
        }
        other => return Err(invalid(format!("'{other}' is not a closed-form baseline"))),
    };
    Ok(StageCounts {
        conv: mac(conv),
        reduce: mac(reduce),
        mix: mac(mix),
        reconstruct: OpCounts::default(),
    })
}

/// Cost of a baseline given by name.
pub fn cost_baselines(method: &str, dims: &CostDims, convention: MacConvention) -> Result<CostReport> {
    let m: Method = method.parse()?;
    Ok(baseline_counts(m, dims, &BaselineConstants::default())?.report(None, convention))
}

/// Cost of any known method; `k` is used by the frequency methods only.
pub fn cost_method(method: Method, dims: &CostDims, k: usize, convention: MacConvention) -> Result<CostReport> {
    match method {
        Method::NonLocal => Ok(cost_spatial(dims, Variant::Softmax, Normalization::ByLength, convention)),
        Method::FsaDot => cost_fsa_dims(dims, k, FsaVariant::Dot, ReduceAlgorithm::Matrix, convention),
        Method::FsaLin => cost_fsa_dims(dims, k, FsaVariant::Lin, ReduceAlgorithm::Matrix, convention),
        other => Ok(baseline_counts(other, dims, &BaselineConstants::default())?.report(None, convention)),
    }
}
