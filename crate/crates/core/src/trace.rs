//! Runtime instrumentation for cross-checking the analytic cost model.
//!
//! Every counted kernel in this crate reports its arithmetic to a
//! thread-local counter while a [`capture`] is active. Outside a capture
//! the hooks reduce to a single thread-local flag check per kernel call.
//!
//! Counting rules (shared with [`crate::accounting`]):
//!
//! * a matrix product `(m x p) * (p x n)` performs `m * p * n` multiply-adds;
//! * every elementwise add, subtract, multiply, divide, exponential and
//!   square root is one operation of its kind;
//! * a sum over `n` values is `n` adds.
//!
//! The capture also audits allocations made through [`crate::linalg::Matrix`]:
//! the largest single buffer and the peak number of live elements allocated
//! since the capture started.

use std::cell::{Cell, RefCell};

/// How a multiply-add is converted to FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MacConvention {
    /// One multiply-add counts as one FLOP.
    One,
    /// One multiply-add counts as two FLOPs (a multiply and an add).
    #[default]
    Two,
}

impl MacConvention {
    pub fn factor(self) -> u64 {
        match self {
            MacConvention::One => 1,
            MacConvention::Two => 2,
        }
    }
}

impl std::fmt::Display for MacConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MacConvention::One => write!(f, "MAC=1"),
            MacConvention::Two => write!(f, "MAC=2"),
        }
    }
}

/// Operation tally by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    pub macs: u64,
    pub adds: u64,
    pub muls: u64,
    pub divs: u64,
    pub exps: u64,
    pub sqrts: u64,
}

impl OpCounts {
    /// Operations that are not multiply-adds.
    pub fn elementwise(&self) -> u64 {
        self.adds + self.muls + self.divs + self.exps + self.sqrts
    }

    pub fn flops(&self, convention: MacConvention) -> u64 {
        self.macs * convention.factor() + self.elementwise()
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;
    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            macs: self.macs + o.macs,
            adds: self.adds + o.adds,
            muls: self.muls + o.muls,
            divs: self.divs + o.divs,
            exps: self.exps + o.exps,
            sqrts: self.sqrts + o.sqrts,
        }
    }
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: OpCounts) {
        *self = *self + o;
    }
}

/// Result of one instrumented execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Trace {
    pub counts: OpCounts,
    /// Element count of the largest matrix allocated during the capture.
    pub largest_alloc: usize,
    /// Peak number of elements held by matrices allocated during the capture.
    pub peak_live: usize,
}

/// Operation count actually executed, under the given convention.
pub fn measured_flops(trace: &Trace, convention: MacConvention) -> u64 {
    trace.counts.flops(convention)
}

#[derive(Default, Clone, Copy)]
struct State {
    counts: OpCounts,
    largest: usize,
    live: i64,
    peak: i64,
}

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static STATE: RefCell<State> = RefCell::new(State::default());
}

/// Runs `f` with instrumentation enabled on the current thread.
///
/// Captures may nest; the inner capture sees only its own work and the outer
/// one is unaffected by it.
pub fn capture<R>(f: impl FnOnce() -> R) -> (R, Trace) {
    let was_active = ACTIVE.with(|a| a.replace(true));
    let saved = STATE.with(|s| std::mem::take(&mut *s.borrow_mut()));
    let out = f();
    let st = STATE.with(|s| std::mem::replace(&mut *s.borrow_mut(), saved));
    ACTIVE.with(|a| a.set(was_active));
    let trace = Trace {
        counts: st.counts,
        largest_alloc: st.largest,
        peak_live: st.peak.max(0) as usize,
    };
    (out, trace)
}

#[inline]
fn record(update: impl FnOnce(&mut State)) {
    if ACTIVE.with(|a| a.get()) {
        STATE.with(|s| update(&mut s.borrow_mut()));
    }
}

#[inline]
pub(crate) fn macs(n: usize) {
    record(|s| s.counts.macs += n as u64);
}

#[inline]
pub(crate) fn adds(n: usize) {
    record(|s| s.counts.adds += n as u64);
}

#[inline]
pub(crate) fn muls(n: usize) {
    record(|s| s.counts.muls += n as u64);
}

#[inline]
pub(crate) fn divs(n: usize) {
    record(|s| s.counts.divs += n as u64);
}

#[inline]
pub(crate) fn exps(n: usize) {
    record(|s| s.counts.exps += n as u64);
}

#[inline]
pub(crate) fn sqrts(n: usize) {
    record(|s| s.counts.sqrts += n as u64);
}

#[inline]
pub(crate) fn on_alloc(len: usize) {
    record(|s| {
        s.largest = s.largest.max(len);
        s.live += len as i64;
        s.peak = s.peak.max(s.live);
    });
}

#[inline]
pub(crate) fn on_free(len: usize) {
    record(|s| s.live -= len as i64);
}
