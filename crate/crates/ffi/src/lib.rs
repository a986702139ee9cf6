//! C ABI over `bilateral_core`.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`BilateralStatus`] and writes its
//!   result through an out-pointer. On failure out-pointers are left
//!   untouched unless a function says otherwise, and
//!   [`bilateral_last_error`] describes the problem.
//! * Strings are NUL-terminated UTF-8 and are only borrowed for the call.
//! * Handles ([`BilateralScorer`], [`BilateralCache`]) are opaque; create
//!   them with the `_new` function and release them with the matching
//!   `_free`. Passing NULL to `_free` is a no-op.
//! * Panics never cross the boundary; they surface as
//!   [`BilateralStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bilateral_core::error::Error;
use bilateral_core::evalharness::{self, LabeledOption, TIE_LABEL};
use bilateral_core::rewards::{self, BatchStats, RewardConfig, RewardVariant, ScoredComponents};
use bilateral_core::structure;
use bilateral_core::textnorm::{self, F1Mode};
use bilateral_core::tgrpo;
use bilateral_core::trajcache::{BatchRecord, GroupSummary, TrajectoryCache};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilateralStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidConfig = 4,
    EmptyWindow = 5,
    OutOfOrderBatch = 6,
    LengthMismatch = 7,
    BufferTooSmall = 8,
    Internal = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilateralVariant {
    Bilateral = 0,
    Base = 1,
    Length = 2,
    Short = 3,
    LengthRp = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilateralF1Mode {
    Set = 0,
    Bag = 1,
}

/// Numeric reward parameters. Fill with [`bilateral_reward_params_default`]
/// and adjust before creating a scorer.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralRewardParams {
    pub w_f1: f64,
    pub w_fmt: f64,
    pub w_length: f64,
    pub w_short: f64,
    pub delta: f64,
    pub tau_minus: f64,
    pub tau_plus: f64,
    pub tau_rep: f64,
    pub l_plus: f64,
    pub s_minus: f64,
    pub eps: f64,
    pub variant: BilateralVariant,
    pub f1_mode: BilateralF1Mode,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralStats {
    pub mean_length: f64,
    pub mean_f1: f64,
    pub group_count: usize,
}

/// Per-completion reward inputs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralComponents {
    pub f1: f64,
    /// 0 or 1.
    pub fmt: u8,
    pub rep: f64,
    pub length: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralBreakdown {
    pub f1: f64,
    pub fmt: u8,
    pub br: f64,
    pub rep: f64,
    pub length_term: f64,
    pub final_reward: f64,
}

/// Opaque reward scorer holding a validated configuration.
pub struct BilateralScorer {
    cfg: RewardConfig,
}

/// Opaque trajectory cache of per-completion summaries.
pub struct BilateralCache {
    inner: TrajectoryCache<GroupSummary>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(BilateralStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) | Error::UnknownVariant(_) => BilateralStatus::InvalidConfig,
            Error::EmptyWindow(_) => BilateralStatus::EmptyWindow,
            Error::OutOfOrderBatch { .. } => BilateralStatus::OutOfOrderBatch,
            Error::LengthMismatch(_) => BilateralStatus::LengthMismatch,
            _ => BilateralStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn fail(status: BilateralStatus, msg: &str) -> Fail {
    Fail(status, msg.to_owned())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BilateralStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BilateralStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BilateralStatus::Internal
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| fail(BilateralStatus::NullPointer, "null out-pointer"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(
            BilateralStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(BilateralStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(
            BilateralStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn mode(m: BilateralF1Mode) -> F1Mode {
    match m {
        BilateralF1Mode::Set => F1Mode::Set,
        BilateralF1Mode::Bag => F1Mode::Bag,
    }
}

fn variant(v: BilateralVariant) -> RewardVariant {
    match v {
        BilateralVariant::Bilateral => RewardVariant::Bilateral,
        BilateralVariant::Base => RewardVariant::Base,
        BilateralVariant::Length => RewardVariant::Length,
        BilateralVariant::Short => RewardVariant::Short,
        BilateralVariant::LengthRp => RewardVariant::LengthRp,
    }
}

fn stats_out(s: &BatchStats) -> BilateralStats {
    BilateralStats {
        mean_length: s.mean_length,
        mean_f1: s.mean_f1,
        group_count: s.group_count,
    }
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bilateral_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Token F1 between two texts.
///
/// # Safety
/// `pred` and `gold` must be valid NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_token_f1(
    pred: *const c_char,
    gold: *const c_char,
    f1_mode: BilateralF1Mode,
    out: *mut BilateralF1,
) -> BilateralStatus {
    guard(|| {
        let r = textnorm::token_f1(
            str_arg(pred, "pred")?,
            str_arg(gold, "gold")?,
            mode(f1_mode),
        );
        *out_ref(out)? = BilateralF1 {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        };
        Ok(())
    })
}

/// 1 when `output` follows the think-then-answer grammar, else 0.
///
/// # Safety
/// `output` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_format_reward(
    output: *const c_char,
    out: *mut u8,
) -> BilateralStatus {
    guard(|| {
        *out_ref(out)? = structure::format_reward(str_arg(output, "output")?);
        Ok(())
    })
}

/// Capped 4-gram repetition ratio of a think segment.
///
/// # Safety
/// `think` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_repetition_penalty(
    think: *const c_char,
    tau_rep: f64,
    eps: f64,
    out: *mut f64,
) -> BilateralStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&tau_rep) || eps.is_nan() || eps < 0.0 {
            return Err(fail(
                BilateralStatus::InvalidArgument,
                "need 0 <= tau_rep <= 1 and eps >= 0",
            ));
        }
        *out_ref(out)? = structure::repetition_penalty(str_arg(think, "think")?, tau_rep, eps);
        Ok(())
    })
}

/// Index of the option with the strictly highest F1 against `answer`, or -1
/// when the best score is tied (the "E" outcome).
///
/// # Safety
/// `answer` and each of the `n` entries of `options` must be valid
/// NUL-terminated strings; `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_match_option(
    answer: *const c_char,
    options: *const *const c_char,
    n: usize,
    f1_mode: BilateralF1Mode,
    out_index: *mut i64,
) -> BilateralStatus {
    guard(|| {
        if n < 2 {
            return Err(fail(
                BilateralStatus::InvalidArgument,
                "need at least 2 options",
            ));
        }
        let answer = str_arg(answer, "answer")?;
        let opts = slice_arg(options, n, "options")?
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                Ok(LabeledOption {
                    label: i.to_string(),
                    text: str_arg(p, "option")?.to_owned(),
                })
            })
            .collect::<Result<Vec<_>, Fail>>()?;
        let label = evalharness::match_option(answer, &opts, mode(f1_mode));
        *out_ref(out_index)? = if label == TIE_LABEL {
            -1
        } else {
            label.parse().expect("labels are indices")
        };
        Ok(())
    })
}

/// Normalized advantages `(r - mean) / (std + adv_eps)` with the population
/// standard deviation. `out` must hold `n` values.
///
/// # Safety
/// `rewards` must point to `n` readable values and `out` to `n` writable
/// values.
#[no_mangle]
pub unsafe extern "C" fn bilateral_advantages(
    rewards: *const f64,
    n: usize,
    adv_eps: f64,
    out: *mut f64,
) -> BilateralStatus {
    guard(|| {
        if adv_eps.is_nan() || adv_eps <= 0.0 {
            return Err(fail(
                BilateralStatus::InvalidArgument,
                "adv_eps must be > 0",
            ));
        }
        let r = slice_arg(rewards, n, "rewards")?;
        if n > 0 && out.is_null() {
            return Err(fail(BilateralStatus::NullPointer, "out is null"));
        }
        let adv = tgrpo::normalized_advantages(r, adv_eps);
        if n > 0 {
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&adv);
        }
        Ok(())
    })
}

/// Mean length and mean F1 over `n` completions.
///
/// # Safety
/// `lengths` and `f1s` must point to `n` readable values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_window_stats(
    lengths: *const usize,
    f1s: *const f64,
    n: usize,
    out: *mut BilateralStats,
) -> BilateralStatus {
    guard(|| {
        let l = slice_arg(lengths, n, "lengths")?;
        let f = slice_arg(f1s, n, "f1s")?;
        let s = rewards::window_stats(l.iter().copied().zip(f.iter().copied()))?;
        *out_ref(out)? = stats_out(&s);
        Ok(())
    })
}

/// Default reward parameters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_reward_params_default(
    out: *mut BilateralRewardParams,
) -> BilateralStatus {
    guard(|| {
        let c = RewardConfig::default();
        *out_ref(out)? = BilateralRewardParams {
            w_f1: c.w_f1,
            w_fmt: c.w_fmt,
            w_length: c.w_length,
            w_short: c.w_short,
            delta: c.delta,
            tau_minus: c.tau_minus,
            tau_plus: c.tau_plus,
            tau_rep: c.tau_rep,
            l_plus: c.l_plus,
            s_minus: c.s_minus,
            eps: c.eps,
            variant: BilateralVariant::Bilateral,
            f1_mode: BilateralF1Mode::Set,
        };
        Ok(())
    })
}

/// Validate `params` and create a scorer. Release with
/// [`bilateral_scorer_free`].
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_scorer_new(
    params: *const BilateralRewardParams,
    out: *mut *mut BilateralScorer,
) -> BilateralStatus {
    guard(|| {
        let p = params
            .as_ref()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "params is null"))?;
        let cfg = RewardConfig {
            w_f1: p.w_f1,
            w_fmt: p.w_fmt,
            w_length: p.w_length,
            w_short: p.w_short,
            delta: p.delta,
            tau_minus: p.tau_minus,
            tau_plus: p.tau_plus,
            tau_rep: p.tau_rep,
            l_plus: p.l_plus,
            s_minus: p.s_minus,
            eps: p.eps,
            variant: variant(p.variant),
            f1_mode: mode(p.f1_mode),
        };
        cfg.validate()?;
        let slot = out_ref(out)?;
        *slot = Box::into_raw(Box::new(BilateralScorer { cfg }));
        Ok(())
    })
}

/// # Safety
/// `scorer` must be NULL or a handle from [`bilateral_scorer_new`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn bilateral_scorer_free(scorer: *mut BilateralScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}

/// F1, format flag and repetition penalty of one completion against `gold`.
/// `length` is the completion length used by the length-shaped terms.
///
/// # Safety
/// `scorer` must be a live handle, the strings valid, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_scorer_components(
    scorer: *const BilateralScorer,
    output: *const c_char,
    gold: *const c_char,
    length: usize,
    out: *mut BilateralComponents,
) -> BilateralStatus {
    guard(|| {
        let s = scorer
            .as_ref()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "scorer is null"))?;
        let c = rewards::score_components(
            str_arg(output, "output")?,
            str_arg(gold, "gold")?,
            length,
            &s.cfg,
        );
        *out_ref(out)? = BilateralComponents {
            f1: c.f1,
            fmt: c.fmt,
            rep: c.rep,
            length: c.length,
        };
        Ok(())
    })
}

/// Final reward of one completion given window statistics.
///
/// # Safety
/// All pointers must be valid; `scorer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bilateral_scorer_final(
    scorer: *const BilateralScorer,
    components: *const BilateralComponents,
    stats: *const BilateralStats,
    out: *mut BilateralBreakdown,
) -> BilateralStatus {
    guard(|| {
        let s = scorer
            .as_ref()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "scorer is null"))?;
        let c = components
            .as_ref()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "components is null"))?;
        let st = stats
            .as_ref()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "stats is null"))?;
        if c.fmt > 1 {
            return Err(fail(BilateralStatus::InvalidArgument, "fmt must be 0 or 1"));
        }
        let b = rewards::final_reward(
            &ScoredComponents {
                f1: c.f1,
                fmt: c.fmt,
                rep: c.rep,
                length: c.length,
            },
            &BatchStats {
                mean_length: st.mean_length,
                mean_f1: st.mean_f1,
                group_count: st.group_count,
            },
            &s.cfg,
        );
        *out_ref(out)? = BilateralBreakdown {
            f1: b.f1,
            fmt: b.fmt,
            br: b.br,
            rep: b.rep,
            length_term: b.length_term,
            final_reward: b.final_reward,
        };
        Ok(())
    })
}

/// Create an empty cache holding at most `capacity` batches. Release with
/// [`bilateral_cache_free`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_cache_new(
    capacity: usize,
    out: *mut *mut BilateralCache,
) -> BilateralStatus {
    guard(|| {
        let inner = TrajectoryCache::new(capacity)?;
        let slot = out_ref(out)?;
        *slot = Box::into_raw(Box::new(BilateralCache { inner }));
        Ok(())
    })
}

/// # Safety
/// `cache` must be NULL or a handle from [`bilateral_cache_new`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn bilateral_cache_free(cache: *mut BilateralCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Append a batch of `n` completion summaries, evicting the oldest batch when
/// full. Batch ids must strictly increase.
///
/// # Safety
/// `cache` must be a live handle and the arrays must hold `n` values each.
#[no_mangle]
pub unsafe extern "C" fn bilateral_cache_push(
    cache: *mut BilateralCache,
    batch_id: u64,
    created_step: usize,
    lengths: *const usize,
    f1s: *const f64,
    final_rewards: *const f64,
    n: usize,
) -> BilateralStatus {
    guard(|| {
        let c = cache
            .as_mut()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "cache is null"))?;
        let l = slice_arg(lengths, n, "lengths")?;
        let f = slice_arg(f1s, n, "f1s")?;
        let r = slice_arg(final_rewards, n, "final_rewards")?;
        let groups = (0..n)
            .map(|i| GroupSummary {
                length: l[i],
                f1: f[i],
                final_reward: r[i],
                rollout_ref: None,
            })
            .collect();
        c.inner.push(BatchRecord {
            batch_id,
            created_step,
            groups,
        })?;
        Ok(())
    })
}

/// Number of batches and of completions currently cached.
///
/// # Safety
/// `cache` must be a live handle; out-pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn bilateral_cache_len(
    cache: *const BilateralCache,
    out_batches: *mut usize,
    out_groups: *mut usize,
) -> BilateralStatus {
    guard(|| {
        let c = cache
            .as_ref()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "cache is null"))?;
        if let Some(b) = out_batches.as_mut() {
            *b = c.inner.len();
        }
        if let Some(g) = out_groups.as_mut() {
            *g = c.inner.records().map(|r| r.groups.len()).sum();
        }
        Ok(())
    })
}

/// Window means over every cached completion.
///
/// # Safety
/// `cache` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_cache_window_stats(
    cache: *const BilateralCache,
    out: *mut BilateralStats,
) -> BilateralStatus {
    guard(|| {
        let c = cache
            .as_ref()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "cache is null"))?;
        *out_ref(out)? = stats_out(&c.inner.window_stats()?);
        Ok(())
    })
}

/// Normalized advantages over the cached window, oldest completion first.
/// Writes the window size to `out_len`; if `capacity` is smaller, nothing
/// else is written and [`BilateralStatus::BufferTooSmall`] is returned.
///
/// # Safety
/// `cache` must be a live handle, `out` must hold `capacity` values, and
/// `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bilateral_cache_advantages(
    cache: *const BilateralCache,
    adv_eps: f64,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> BilateralStatus {
    guard(|| {
        let c = cache
            .as_ref()
            .ok_or_else(|| fail(BilateralStatus::NullPointer, "cache is null"))?;
        if adv_eps.is_nan() || adv_eps <= 0.0 {
            return Err(fail(
                BilateralStatus::InvalidArgument,
                "adv_eps must be > 0",
            ));
        }
        let adv = tgrpo::normalized_advantages(&c.inner.final_rewards()?, adv_eps);
        *out_ref(out_len)? = adv.len();
        if capacity < adv.len() {
            return Err(fail(
                BilateralStatus::BufferTooSmall,
                "output buffer too small",
            ));
        }
        if out.is_null() {
            return Err(fail(BilateralStatus::NullPointer, "out is null"));
        }
        ptr::copy_nonoverlapping(adv.as_ptr(), out, adv.len());
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bilateral_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
