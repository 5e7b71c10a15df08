use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use fsanet::accounting::{cost_method, CostDims, CostReport, Method};
use fsanet::attention::{
    linsoftmax_map, lowpass_then_attend, softmax_map, spatial_attention, token_map, AttentionMap,
};
use fsanet::projection::{
    build_projection, devectorize, project_fullcrop, project_lowfreq, project_separable, vectorize,
};
use fsanet::synth;
use fsanet::tensorfile::TensorFile;
use fsanet::{
    AttentionParams, FeatureMap, FsaConfig, FsaError, FsaVariant, MacConvention, Matrix, Normalization,
    Precision, Real, TokenMatrix, Variant,
};

#[derive(Debug, Parser)]
#[command(name = "fsa", version, about = "Frequency self-attention toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the frequency-domain path against explicit low-pass + spatial attention.
    Equiv(EquivArgs),
    /// Output deviation from unfiltered attention as a function of k (CSV).
    AblateK(AblateArgs),
    /// Time the three low-frequency projection algorithms (CSV).
    BenchDct(BenchArgs),
    /// Dump softmax and linearized attention maps (CSV, optional PGM).
    Attnmap(AttnmapArgs),
    /// Analytic FLOP and memory report.
    Cost(CostArgs),
}

/// Flags shared by the commands that build an attention problem. Unset
/// sizes fall back to per-command defaults.
#[derive(Debug, Args, Clone)]
pub struct Common {
    #[arg(long = "H")]
    pub h: Option<usize>,
    #[arg(long = "W")]
    pub w: Option<usize>,
    #[arg(long = "C")]
    pub c: Option<usize>,
    #[arg(long)]
    pub dk: Option<usize>,
    #[arg(long)]
    pub dv: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "R", default_value_t = 1)]
    pub r: usize,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for batch work; 1 keeps everything on the main thread.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Dot,
    Lin,
}

impl From<VariantArg> for FsaVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Dot => FsaVariant::Dot,
            VariantArg::Lin => FsaVariant::Lin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Args)]
pub struct EquivArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated k values; defaults to 1..=min(H,W).
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16, 32, 64])]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
}

#[derive(Debug, Args)]
pub struct AttnmapArgs {
    #[command(flatten)]
    pub common: Common,
    /// Query row; defaults to the center.
    #[arg(long)]
    pub row: Option<usize>,
    /// Query column; defaults to the center.
    #[arg(long)]
    pub col: Option<usize>,
    /// Also write grayscale PGM images of the single-point maps.
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Kv,
    Csv,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long = "H", default_value_t = 97)]
    pub h: usize,
    #[arg(long = "W", default_value_t = 97)]
    pub w: usize,
    #[arg(long = "C", default_value_t = 512)]
    pub c: usize,
    #[arg(long, default_value_t = 64)]
    pub dk: usize,
    /// Defaults to dk.
    #[arg(long)]
    pub dv: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// FLOPs per multiply-add.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub mac: u8,
    /// Comma-separated method names; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a command, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable input (exit 2).
    Usage(String),
    /// The computation ran but missed its tolerance (exit 1).
    Tolerance(String),
}

impl From<FsaError> for CliError {
    fn from(e: FsaError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Equiv(a) => cmd_equiv(&a),
        Command::AblateK(a) => cmd_ablate_k(&a),
        Command::BenchDct(a) => cmd_bench_dct(&a),
        Command::Attnmap(a) => cmd_attnmap(&a),
        Command::Cost(a) => cmd_cost(&a),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(CliError::Tolerance(text)) => {
            print!("{text}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Fully resolved problem description.
#[derive(Debug, Clone, Copy)]
struct Problem {
    h: usize,
    w: usize,
    c: usize,
    d_k: usize,
    d_v: usize,
    k: usize,
}

fn resolve(common: &Common, default_hw: usize, default_c: usize, default_d: usize) -> CliResult<Problem> {
    let h = common.h.unwrap_or(default_hw);
    let w = common.w.unwrap_or(default_hw);
    let c = common.c.unwrap_or(default_c);
    let d_k = common.dk.unwrap_or(default_d);
    let d_v = common.dv.unwrap_or(d_k);
    let k = common.k.unwrap_or(8.min(h.min(w)));
    if h == 0 || w == 0 || c == 0 || d_k == 0 || d_v == 0 {
        return Err(usage("H, W, C, dk and dv must be positive"));
    }
    if k == 0 || k > h.min(w) {
        return Err(usage(format!("k={k} must lie in 1..={} for a {h}x{w} map", h.min(w))));
    }
    if common.r == 0 {
        return Err(usage("R must be at least 1"));
    }
    if common.threads == 0 {
        return Err(usage("threads must be at least 1"));
    }
    Ok(Problem { h, w, c, d_k, d_v, k })
}

/// Input map from `--input`, overriding the configured sizes, or `None`.
fn load_input<T: Real>(common: &Common) -> CliResult<Option<FeatureMap<T>>> {
    match &common.input {
        None => Ok(None),
        Some(path) => {
            let t = TensorFile::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            Ok(Some(t.to_feature_map()?))
        }
    }
}

fn with_input_dims(mut p: Problem, x: &FeatureMap<impl Real>, common: &Common) -> CliResult<Problem> {
    let (c, h, w) = x.dims();
    p.c = c;
    p.h = h;
    p.w = w;
    p.k = common.k.unwrap_or(8.min(h.min(w)));
    if p.k == 0 || p.k > h.min(w) {
        return Err(usage(format!("k={} must lie in 1..={} for a {h}x{w} map", p.k, h.min(w))));
    }
    Ok(p)
}

fn params_for<T: Real>(seed: u64, p: &Problem) -> CliResult<AttentionParams<T>> {
    if p.d_v != p.c && p.d_v != p.d_k {
        return Err(usage(format!("dv={} must equal C={} or dk={}", p.d_v, p.c, p.d_k)));
    }
    // Parameters use their own stream so they do not depend on the input.
    Ok(synth::random_params(&mut synth::rng(seed.wrapping_add(1)), p.c, p.d_k, p.d_v))
}

fn write_or_return(out: Option<&Path>, text: String) -> CliResult<String> {
    match out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| usage(format!("thread pool: {e}")))
}

fn red_variant(v: FsaVariant) -> Variant {
    match v {
        FsaVariant::Dot => Variant::Dot,
        FsaVariant::Lin => Variant::NormalizedLinSoftmax,
    }
}

fn cmd_equiv(a: &EquivArgs) -> CliResult<String> {
    match Precision::from(a.common.precision) {
        Precision::F32 => equiv::<f32>(&a.common),
        Precision::F64 => equiv::<f64>(&a.common),
    }
}

fn equiv<T: Real>(common: &Common) -> CliResult<String> {
    let mut p = resolve(common, 24, 64, 64)?;
    let x = match load_input::<T>(common)? {
        Some(x) => {
            p = with_input_dims(p, &x, common)?;
            x
        }
        None => synth::uniform_map(&mut synth::rng(common.seed), p.c, p.h, p.w),
    };
    let params = params_for::<T>(common.seed, &p)?;
    if common.r > 1 && p.d_v != p.c {
        return Err(usage("R > 1 needs dv == C"));
    }
    let tolerance = common.tolerance.unwrap_or(match T::PRECISION {
        Precision::F32 => 1e-3,
        Precision::F64 => 1e-6,
    });
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(usage("tolerance must be a non-negative number"));
    }
    let variants: Vec<FsaVariant> = match common.variant {
        Some(v) => vec![v.into()],
        None => vec![FsaVariant::Dot, FsaVariant::Lin],
    };
    if common.out.is_some() && variants.len() != 1 {
        return Err(usage("--out needs a single --variant"));
    }
    let proj = build_projection::<T>(p.h, p.w, p.k)?;
    let mut report = String::new();
    let mut ok = true;
    for variant in variants {
        let cfg = FsaConfig::new(p.k, variant).with_recurrence(common.r);
        let green = fsanet::fsa_apply(&x, &cfg, &params)?;
        let mut red = vectorize(&x);
        for _ in 0..common.r {
            red = lowpass_then_attend(&red, &proj, &params, red_variant(variant))?;
        }
        let red = devectorize(&red, p.h, p.w)?;
        let diff = green.combine(T::one(), &red, -T::one());
        let err = diff.frobenius_norm().as_f64() / red.frobenius_norm().as_f64().max(f64::MIN_POSITIVE);
        let pass = err <= tolerance;
        ok &= pass;
        let _ = writeln!(
            report,
            "variant={variant} H={} W={} C={} dk={} dv={} k={} R={} precision={} rel_error={err:e} tolerance={tolerance:e} status={}",
            p.h,
            p.w,
            p.c,
            p.d_k,
            p.d_v,
            p.k,
            common.r,
            T::PRECISION,
            if pass { "pass" } else { "fail" }
        );
        if let Some(path) = &common.out {
            TensorFile::from_feature_map(&green)
                .write(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
    }
    if ok {
        Ok(report)
    } else {
        Err(CliError::Tolerance(report))
    }
}

fn cmd_ablate_k(a: &AblateArgs) -> CliResult<String> {
    match Precision::from(a.common.precision) {
        Precision::F32 => ablate::<f32>(a),
        Precision::F64 => ablate::<f64>(a),
    }
}

fn relative_deviation<T: Real>(a: &TokenMatrix<T>, reference: &TokenMatrix<T>) -> f64 {
    let num = a.values().sub(reference.values()).frobenius_norm().as_f64();
    let den = reference.values().frobenius_norm().as_f64();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

fn ablate<T: Real>(a: &AblateArgs) -> CliResult<String> {
    let common = &a.common;
    let mut p = resolve(common, 24, 16, 16)?;
    let x = match load_input::<T>(common)? {
        Some(x) => {
            p = with_input_dims(p, &x, common)?;
            x
        }
        None => synth::pink_noise_map(&mut synth::rng(common.seed), p.c, p.h, p.w),
    };
    let params = params_for::<T>(common.seed, &p)?;
    let variant: FsaVariant = common.variant.map_or(FsaVariant::Dot, Into::into);
    let m = p.h.min(p.w);
    let ks: Vec<usize> = if a.ks.is_empty() { (1..=m).collect() } else { a.ks.clone() };
    if let Some(bad) = ks.iter().find(|&&k| k == 0 || k > m) {
        return Err(usage(format!("k={bad} must lie in 1..={m}")));
    }
    let tokens = vectorize(&x);
    let full = spatial_attention(&tokens, &params, red_variant(variant))?;
    let row = |k: usize| -> CliResult<(usize, f64, f64)> {
        let proj = build_projection::<T>(p.h, p.w, k)?;
        let out = fsanet::fsa::fsa_tokens(&tokens, &proj, &params, variant)?;
        let retained = 100.0 * (k * k) as f64 / (p.h * p.w) as f64;
        Ok((k, retained, relative_deviation(&out, &full)))
    };
    let rows: Vec<(usize, f64, f64)> = if common.threads == 1 {
        ks.iter().map(|&k| row(k)).collect::<CliResult<_>>()?
    } else {
        pool(common.threads)?.install(|| ks.par_iter().map(|&k| row(k)).collect::<CliResult<_>>())?
    };
    let mut csv = String::from("k,retained_pct,deviation\n");
    for (k, pct, dev) in rows {
        let _ = writeln!(csv, "{k},{pct},{dev:e}");
    }
    write_or_return(common.out.as_deref(), csv)
}

fn median_ms(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn cmd_bench_dct(a: &BenchArgs) -> CliResult<String> {
    if a.reps < 3 {
        return Err(usage("reps must be at least 3"));
    }
    let common = &a.common;
    let h = common.h.unwrap_or(97);
    let w = common.w.unwrap_or(97);
    let c = common.c.unwrap_or(16);
    if h == 0 || w == 0 || c == 0 {
        return Err(usage("H, W and C must be positive"));
    }
    if let Some(bad) = a.ks.iter().find(|&&k| k == 0 || k > h.min(w)) {
        return Err(usage(format!("k={bad} must lie in 1..={}", h.min(w))));
    }
    // Agreement in double precision before anything is timed.
    let x64 = synth::uniform_map::<f64>(&mut synth::rng(common.seed), c, h, w);
    for &k in &a.ks {
        let p = build_projection::<f64>(h, w, k)?;
        let m = project_lowfreq(&vectorize(&x64), &p)?;
        let s = project_separable(&x64, k)?;
        let f = project_fullcrop(&x64, k)?;
        let diff = m.max_abs_diff(&s).max(m.max_abs_diff(&f));
        if diff > 1e-6 {
            return Err(CliError::Tolerance(format!(
                "projection algorithms disagree at k={k}: max abs difference {diff:e}\n"
            )));
        }
    }
    let rows = match Precision::from(common.precision) {
        Precision::F32 => bench::<f32>(&x64.cast(), &a.ks, a.reps)?,
        Precision::F64 => bench::<f64>(&x64, &a.ks, a.reps)?,
    };
    let mut csv = String::from("method,k,median_ms\n");
    for (method, k, ms) in rows {
        let _ = writeln!(csv, "{method},{k},{ms:.4}");
    }
    write_or_return(common.out.as_deref(), csv)
}

fn bench<T: Real>(x: &FeatureMap<T>, ks: &[usize], reps: usize) -> CliResult<Vec<(&'static str, usize, f64)>> {
    let (_, h, w) = x.dims();
    let tokens = vectorize(x);
    let mut rows = Vec::new();
    for &k in ks {
        // P is built once per size, outside the timed region.
        let p = build_projection::<T>(h, w, k)?;
        let mut times = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..reps {
            let t = Instant::now();
            std::hint::black_box(project_lowfreq(&tokens, &p)?);
            times[0].push(t.elapsed().as_secs_f64() * 1e3);
            let t = Instant::now();
            std::hint::black_box(project_separable(x, k)?);
            times[1].push(t.elapsed().as_secs_f64() * 1e3);
            let t = Instant::now();
            std::hint::black_box(project_fullcrop(x, k)?);
            times[2].push(t.elapsed().as_secs_f64() * 1e3);
        }
        let [m, s, f] = times;
        rows.push(("matrix", k, median_ms(m)));
        rows.push(("separable", k, median_ms(s)));
        rows.push(("fullcrop", k, median_ms(f)));
    }
    Ok(rows)
}

fn cmd_attnmap(a: &AttnmapArgs) -> CliResult<String> {
    match Precision::from(a.common.precision) {
        Precision::F32 => attnmap::<f32>(a),
        Precision::F64 => attnmap::<f64>(a),
    }
}

fn matrix_csv<T: Real>(m: &Matrix<T>) -> String {
    let mut s = String::new();
    let header: Vec<String> = (0..m.cols()).map(|c| format!("c{c}")).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Plain (ASCII) 8-bit PGM, min-max scaled.
fn pgm<T: Real>(m: &Matrix<T>) -> String {
    let vals: Vec<f64> = m.as_slice().iter().map(|v| v.as_f64()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = format!("P2\n{} {}\n255\n", m.cols(), m.rows());
    for r in 0..m.rows() {
        let row: Vec<String> = (0..m.cols())
            .map(|c| (((vals[r * m.cols() + c] - lo) / span) * 255.0).round().to_string())
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn point_map<T: Real>(map: &AttentionMap<T>, j: usize, h: usize, w: usize) -> CliResult<Matrix<T>> {
    Ok(Matrix::from_vec(h, w, map.column(j))?)
}

fn argmax<T: Real>(v: &[T]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn attnmap<T: Real>(a: &AttnmapArgs) -> CliResult<String> {
    let common = &a.common;
    let mut p = resolve(common, 16, 16, 16)?;
    let x = match load_input::<T>(common)? {
        Some(x) => {
            p = with_input_dims(p, &x, common)?;
            x
        }
        None => synth::pink_noise_map(&mut synth::rng(common.seed), p.c, p.h, p.w),
    };
    let (row, col) = (a.row.unwrap_or(p.h / 2), a.col.unwrap_or(p.w / 2));
    if row >= p.h || col >= p.w {
        return Err(usage(format!("point ({row},{col}) is outside the {}x{} map", p.h, p.w)));
    }
    let params = params_for::<T>(common.seed, &p)?;
    let (q, k, _) = token_map(&vectorize(&x), &params)?;
    let soft = softmax_map(&q, &k)?;
    let lin = linsoftmax_map(&q, &k, Normalization::ByLength)?;
    let j = row * p.w + col;

    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("attnmap"));
    std::fs::create_dir_all(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let put = |name: &str, text: String| -> CliResult<()> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
    };
    put("softmax_map.csv", matrix_csv(soft.values()))?;
    put("linsoftmax_map.csv", matrix_csv(lin.values()))?;
    let ps = point_map(&soft, j, p.h, p.w)?;
    let pl = point_map(&lin, j, p.h, p.w)?;
    put("point_softmax.csv", matrix_csv(&ps))?;
    put("point_linsoftmax.csv", matrix_csv(&pl))?;
    if a.pgm {
        put("point_softmax.pgm", pgm(&ps))?;
        put("point_linsoftmax.pgm", pgm(&pl))?;
    }
    let qn = q.values().column_norms();
    let kn = k.values().column_norms();
    let mut norms = String::from("token,q_norm,k_norm\n");
    for (t, (a, b)) in qn.iter().zip(&kn).enumerate() {
        let _ = writeln!(norms, "{t},{a},{b}");
    }
    put("norms.csv", norms)?;

    let n = p.h * p.w;
    let same_argmax = (0..n)
        .filter(|&c| argmax(&soft.column(c)) == argmax(&lin.column(c)))
        .count();
    let max_sum_err = soft
        .column_sums()
        .iter()
        .map(|s| (s.as_f64() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut out = String::new();
    let _ = writeln!(out, "dir={}", dir.display());
    let _ = writeln!(out, "point={row},{col} token={j}");
    let _ = writeln!(out, "softmax_column_sum_max_error={max_sum_err:e}");
    let _ = writeln!(out, "same_argmax_columns={same_argmax}/{n}");
    Ok(out)
}

fn cmd_cost(a: &CostArgs) -> CliResult<String> {
    let convention = if a.mac == 1 { MacConvention::One } else { MacConvention::Two };
    let dims = CostDims::new(a.h, a.w, a.c, a.dk).with_dv(a.dv.unwrap_or(a.dk));
    if a.h == 0 || a.w == 0 || a.c == 0 {
        return Err(usage("H, W and C must be positive"));
    }
    let methods: Vec<Method> = if a.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        a.methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?
    };
    let baseline = cost_method(Method::NonLocal, &dims, a.k, convention)?;
    let reports: Vec<(Method, CostReport)> = methods
        .iter()
        .map(|&m| Ok((m, cost_method(m, &dims, a.k, convention)?)))
        .collect::<CliResult<_>>()?;
    let mut text = String::new();
    match a.format {
        Format::Csv => {
            let _ = writeln!(text, "{},reduction_vs_nonlocal_pct", CostReport::csv_header());
            for (m, r) in &reports {
                let _ = writeln!(text, "{},{:.2}", r.csv_row(m.name()), r.reduction_vs(&baseline));
            }
        }
        Format::Kv => {
            for (i, (m, r)) in reports.iter().enumerate() {
                if i > 0 {
                    text.push('\n');
                }
                text.push_str(&r.to_kv(m.name()));
                let _ = writeln!(text, "reduction_vs_nonlocal_pct={:.2}", r.reduction_vs(&baseline));
            }
        }
    }
    write_or_return(a.out.as_deref(), text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("fsa").chain(args.iter().copied())).unwrap()
    }

    fn run_cmd(args: &[&str]) -> CliResult<String> {
        match parse(args).command {
            Command::Equiv(a) => cmd_equiv(&a),
            Command::AblateK(a) => cmd_ablate_k(&a),
            Command::BenchDct(a) => cmd_bench_dct(&a),
            Command::Attnmap(a) => cmd_attnmap(&a),
            Command::Cost(a) => cmd_cost(&a),
        }
    }

    #[test]
    fn equiv_small_passes() {
        let out = run_cmd(&["equiv", "--H", "8", "--W", "6", "--C", "4", "--dk", "4", "--k", "3"]).unwrap();
        assert_eq!(out.lines().count(), 2);
        assert!(out.lines().all(|l| l.ends_with("status=pass")));
    }

    #[test]
    fn equiv_zero_tolerance_fails() {
        let r = run_cmd(&["equiv", "--H", "8", "--W", "8", "--C", "4", "--dk", "4", "--k", "3", "--tolerance", "0"]);
        assert!(matches!(r, Err(CliError::Tolerance(_))));
    }

    #[test]
    fn equiv_rejects_large_k() {
        let r = run_cmd(&["equiv", "--H", "8", "--W", "8", "--k", "9"]);
        assert!(matches!(r, Err(CliError::Usage(_))));
    }

    #[test]
    fn ablation_rows() {
        let out = run_cmd(&["ablate-k", "--H", "6", "--W", "6", "--C", "3", "--dk", "3", "--ks", "1,3,6"]).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "k,retained_pct,deviation");
        assert_eq!(lines.len(), 4);
        let last: Vec<f64> = lines[3].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last[1], 100.0);
        assert!(last[2] < 1e-9);
    }

    #[test]
    fn threads_do_not_change_ablation() {
        let base = ["ablate-k", "--H", "8", "--W", "8", "--C", "3", "--dk", "3"];
        let one = run_cmd(&base).unwrap();
        let mut more = base.to_vec();
        more.extend(["--threads", "3"]);
        let many = run_cmd(&more).unwrap();
        for (a, b) in one.lines().zip(many.lines()).skip(1) {
            let a: Vec<f64> = a.split(',').map(|v| v.parse().unwrap()).collect();
            let b: Vec<f64> = b.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(a[0], b[0]);
            assert!((a[2] - b[2]).abs() <= 1e-12);
        }
    }

    #[test]
    fn cost_single_method() {
        let out = run_cmd(&["cost", "--methods", "fsa-dot"]).unwrap();
        assert_eq!(out.lines().count(), 2);
        assert!(run_cmd(&["cost", "--methods", "bogus"]).is_err());
    }

    #[test]
    fn median() {
        assert_eq!(median_ms(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_ms(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn pgm_scales_to_bytes() {
        let m = Matrix::from_rows(&[vec![0.0f64, 0.5], vec![1.0, 1.0]]).unwrap();
        assert_eq!(pgm(&m), "P2\n2 2\n255\n0 128\n255 255\n");
    }
}
