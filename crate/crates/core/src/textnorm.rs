//! Answer normalization and token-level F1.
//!
//! Normalization lowercases, replaces every ASCII punctuation character with a
//! space, and collapses whitespace. Tokens are the whitespace split of the
//! result. F1 defaults to set semantics (deduplicated tokens); bag semantics
//! count multiplicities the way SQuAD-style scorers do.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    pub raw: String,
    pub normalized: String,
    pub tokens: Vec<String>,
}

/// How overlapping tokens are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    /// Deduplicated token sets.
    #[default]
    Set,
    /// Multisets; repeated tokens must be matched repeatedly.
    Bag,
}

impl std::str::FromStr for F1Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "set" => Ok(F1Mode::Set),
            "bag" => Ok(F1Mode::Bag),
            other => Err(format!("unknown F1 mode `{other}` (expected set|bag)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl F1Result {
    const ZERO: F1Result = F1Result {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// Lowercase, strip punctuation to spaces, collapse whitespace.
pub fn normalize(input: &str) -> NormalizedText {
    let lowered: String = input
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    let tokens: Vec<String> = lowered.split_whitespace().map(str::to_owned).collect();
    NormalizedText {
        raw: input.to_owned(),
        normalized: tokens.join(" "),
        tokens,
    }
}

/// Tokens of `input` after normalization.
pub fn tokenize(input: &str) -> Vec<String> {
    normalize(input).tokens
}

/// Token-level F1 between a predicted and a gold answer, both normalized.
pub fn token_f1(pred: &str, gold: &str, mode: F1Mode) -> F1Result {
    f1_from_tokens(&tokenize(pred), &tokenize(gold), mode)
}

/// Token-level F1 over already-normalized token lists.
///
/// Both sides empty is a vacuous match (f1 = 1); exactly one side empty
/// scores 0.
pub fn f1_from_tokens<S: AsRef<str>>(pred: &[S], gold: &[S], mode: F1Mode) -> F1Result {
    let (overlap, pred_len, gold_len) = match mode {
        F1Mode::Set => {
            let p: HashSet<&str> = pred.iter().map(AsRef::as_ref).collect();
            let g: HashSet<&str> = gold.iter().map(AsRef::as_ref).collect();
            (p.intersection(&g).count(), p.len(), g.len())
        }
        F1Mode::Bag => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for t in gold {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
            let mut overlap = 0;
            for t in pred {
                if let Some(c) = counts.get_mut(t.as_ref()) {
                    if *c > 0 {
                        *c -= 1;
                        overlap += 1;
                    }
                }
            }
            (overlap, pred.len(), gold.len())
        }
    };

    match (pred_len, gold_len) {
        (0, 0) => F1Result {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        },
        (0, _) | (_, 0) => F1Result::ZERO,
        _ => {
            let precision = overlap as f64 / pred_len as f64;
            let recall = overlap as f64 / gold_len as f64;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            F1Result {
                precision,
                recall,
                f1,
            }
        }
    }
}
