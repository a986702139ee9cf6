//! Final-reward composition.
//!
//! Every variant starts from `w_f1 * f1 + w_fmt * fmt`:
//!
//! | variant     | extra terms                       |
//! |-------------|-----------------------------------|
//! | `base`      | none                              |
//! | `bilateral` | `+ br - rep`                      |
//! | `length`    | `+ w_length * length_term`        |
//! | `short`     | `+ w_short * short_term`          |
//! | `length_rp` | `+ w_length * length_term - rep`  |
//!
//! `br` and the length/short terms are relative to window statistics
//! (mean output length and mean F1 over the trajectory-cache window).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure;
use crate::textnorm::{self, F1Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    #[default]
    Bilateral,
    Base,
    Length,
    Short,
    LengthRp,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 5] = [
        RewardVariant::Bilateral,
        RewardVariant::Base,
        RewardVariant::Length,
        RewardVariant::Short,
        RewardVariant::LengthRp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardVariant::Bilateral => "bilateral",
            RewardVariant::Base => "base",
            RewardVariant::Length => "length",
            RewardVariant::Short => "short",
            RewardVariant::LengthRp => "length_rp",
        }
    }
}

impl std::str::FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RewardVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_owned()))
    }
}

impl std::fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which length-shaped term to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthKind {
    /// Active while `L / mean_L <= l_plus`.
    Length,
    /// Active while `L / mean_L >= s_minus`.
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_f1: f64,
    pub w_fmt: f64,
    pub w_length: f64,
    pub w_short: f64,
    /// Bonus granted by the bilateral term.
    pub delta: f64,
    /// Lower length-ratio threshold of the bilateral term.
    pub tau_minus: f64,
    /// Upper length-ratio threshold of the bilateral term.
    pub tau_plus: f64,
    /// Cap on the repetition penalty.
    pub tau_rep: f64,
    pub l_plus: f64,
    pub s_minus: f64,
    /// Added to the 4-gram count in the repetition ratio.
    pub eps: f64,
    pub variant: RewardVariant,
    pub f1_mode: F1Mode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_f1: 1.0,
            w_fmt: 0.5,
            w_length: 1.0,
            w_short: 1.0,
            delta: 0.5,
            tau_minus: 0.67,
            tau_plus: 1.5,
            tau_rep: 0.5,
            l_plus: 2.0,
            s_minus: 0.5,
            eps: 1e-8,
            variant: RewardVariant::Bilateral,
            f1_mode: F1Mode::Set,
        }
    }
}

impl RewardConfig {
    pub fn with_variant(variant: RewardVariant) -> Self {
        RewardConfig {
            variant,
            ..RewardConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.w_f1,
            self.w_fmt,
            self.w_length,
            self.w_short,
            self.delta,
            self.tau_minus,
            self.tau_plus,
            self.tau_rep,
            self.l_plus,
            self.s_minus,
            self.eps,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reward parameters must be finite".into()));
        }
        if [self.w_f1, self.w_fmt, self.w_length, self.w_short]
            .iter()
            .any(|w| *w < 0.0)
        {
            return Err(Error::Config("reward weights must be >= 0".into()));
        }
        if !(0.0 < self.tau_minus && self.tau_minus < 1.0 && 1.0 < self.tau_plus) {
            return Err(Error::Config(format!(
                "need 0 < tau_minus < 1 < tau_plus, got tau_minus = {}, tau_plus = {}",
                self.tau_minus, self.tau_plus
            )));
        }
        if self.delta < 0.0 {
            return Err(Error::Config("delta must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_rep) {
            return Err(Error::Config("tau_rep must lie in [0, 1]".into()));
        }
        if self.eps < 0.0 {
            return Err(Error::Config("eps must be >= 0".into()));
        }
        Ok(())
    }
}

/// Means over every completion in the statistics window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean_length: f64,
    pub mean_f1: f64,
    pub group_count: usize,
}

/// Mean output length and mean F1 over `(length, f1)` pairs, summed in
/// iteration order.
pub fn window_stats<I>(groups: I) -> Result<BatchStats>
where
    I: IntoIterator<Item = (usize, f64)>,
{
    let mut n = 0usize;
    let mut length_sum = 0.0;
    let mut f1_sum = 0.0;
    for (length, f1) in groups {
        n += 1;
        length_sum += length as f64;
        f1_sum += f1;
    }
    if n == 0 {
        return Err(Error::EmptyWindow(
            "window statistics need at least one group",
        ));
    }
    Ok(BatchStats {
        mean_length: length_sum / n as f64,
        mean_f1: f1_sum / n as f64,
        group_count: n,
    })
}

/// Bonus `delta` for above-mean-F1 outputs whose length ratio falls strictly
/// below `tau_minus` or strictly above `tau_plus`.
pub fn bilateral_term(length: usize, f1: f64, stats: &BatchStats, cfg: &RewardConfig) -> f64 {
    if stats.mean_length <= 0.0 || f1 <= stats.mean_f1 {
        return 0.0;
    }
    let ratio = length as f64 / stats.mean_length;
    if ratio < cfg.tau_minus || ratio > cfg.tau_plus {
        cfg.delta
    } else {
        0.0
    }
}

/// `ln(1 + f1 / mean_f1) * L / mean_L` when the length condition of `kind`
/// holds, else 0. Zero when either window mean is zero.
pub fn length_term(
    length: usize,
    f1: f64,
    stats: &BatchStats,
    cfg: &RewardConfig,
    kind: LengthKind,
) -> f64 {
    if stats.mean_length <= 0.0 || stats.mean_f1 <= 0.0 {
        return 0.0;
    }
    let ratio = length as f64 / stats.mean_length;
    let active = match kind {
        LengthKind::Length => ratio <= cfg.l_plus,
        LengthKind::Short => ratio >= cfg.s_minus,
    };
    if active {
        (f1 / stats.mean_f1).ln_1p() * ratio
    } else {
        0.0
    }
}

/// Per-completion inputs to the final reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredComponents {
    pub f1: f64,
    pub fmt: u8,
    pub rep: f64,
    pub length: usize,
}

/// Score one tagged completion against its gold answer.
///
/// A malformed completion has no answer block to score, so its F1 is 0; the
/// repetition penalty still applies to whatever think span can be found.
pub fn score_components(
    output: &str,
    gold: &str,
    length: usize,
    cfg: &RewardConfig,
) -> ScoredComponents {
    let parsed = structure::parse_tagged(output);
    let f1 = if parsed.well_formed {
        textnorm::token_f1(&parsed.answer, gold, cfg.f1_mode).f1
    } else {
        0.0
    };
    ScoredComponents {
        f1,
        fmt: u8::from(parsed.well_formed),
        rep: structure::repetition_penalty(&parsed.think, cfg.tau_rep, cfg.eps),
        length,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub variant: RewardVariant,
    pub f1: f64,
    pub fmt: u8,
    pub br: f64,
    pub rep: f64,
    pub length_term: f64,
    #[serde(rename = "final")]
    pub final_reward: f64,
}

impl RewardBreakdown {
    /// Recompute the final reward from the stored fields.
    pub fn recompute(&self, cfg: &RewardConfig) -> f64 {
        compose(
            self.variant,
            cfg,
            self.f1,
            self.fmt,
            self.br,
            self.rep,
            self.length_term,
        )
    }
}

fn compose(
    variant: RewardVariant,
    cfg: &RewardConfig,
    f1: f64,
    fmt: u8,
    br: f64,
    rep: f64,
    length_term: f64,
) -> f64 {
    let base = cfg.w_f1 * f1 + cfg.w_fmt * f64::from(fmt);
    match variant {
        RewardVariant::Base => base,
        RewardVariant::Bilateral => base + br - rep,
        RewardVariant::Length => base + cfg.w_length * length_term,
        RewardVariant::Short => base + cfg.w_short * length_term,
        RewardVariant::LengthRp => base + cfg.w_length * length_term - rep,
    }
}

/// Compose the active variant's final reward.
///
/// `br` and `rep` are always filled in for auditing, but only enter `final`
/// for the variants that use them. `length_term` holds the short term for
/// the `short` variant, the length term for `length`/`length_rp`, and 0
/// otherwise.
pub fn final_reward(
    c: &ScoredComponents,
    stats: &BatchStats,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let br = bilateral_term(c.length, c.f1, stats, cfg);
    let length_term = match cfg.variant {
        RewardVariant::Length | RewardVariant::LengthRp => {
            self::length_term(c.length, c.f1, stats, cfg, LengthKind::Length)
        }
        RewardVariant::Short => self::length_term(c.length, c.f1, stats, cfg, LengthKind::Short),
        RewardVariant::Base | RewardVariant::Bilateral => 0.0,
    };
    RewardBreakdown {
        variant: cfg.variant,
        f1: c.f1,
        fmt: c.fmt,
        br,
        rep: c.rep,
        length_term,
        final_reward: compose(cfg.variant, cfg, c.f1, c.fmt, br, c.rep, length_term),
    }
}
