//! Continual-learning curation: keep well-formed, confident predictions and
//! rewrite their answers to the best-matching option text.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::{self, EvalItem, Prediction, TIE_LABEL};
use crate::structure;
use crate::textnorm::F1Mode;
use crate::toytrain::task::stream_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceKind {
    /// Highest per-option token F1 of the answer.
    #[default]
    MaxOptionF1,
    /// exp of the mean per-token log-probability of the answer segment.
    MeanTokenProb,
}

impl std::str::FromStr for ConfidenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_option_f1" => Ok(ConfidenceKind::MaxOptionF1),
            "mean_token_prob" => Ok(ConfidenceKind::MeanTokenProb),
            other => Err(Error::Config(format!("unknown confidence kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    /// Retain only samples whose confidence is strictly above this.
    pub tau: f64,
    pub confidence_kind: ConfidenceKind,
    /// Seeds the replacement draw for tied ("E") matches.
    pub random_seed: u64,
    pub f1_mode: F1Mode,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            tau: 0.4,
            confidence_kind: ConfidenceKind::MaxOptionF1,
            random_seed: 0,
            f1_mode: F1Mode::Set,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementMode {
    F1Aligned,
    RandomE,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedSample {
    pub item_id: String,
    pub original_output: String,
    pub replaced_answer: String,
    pub confidence: f64,
    pub replacement_mode: ReplacementMode,
}

/// Fine-tuning record written by the `curate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub think: String,
    pub answer: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub item_id: String,
    pub confidence: f64,
    pub replacement_mode: ReplacementMode,
    pub original_output: String,
}

/// Confidence of one prediction for `item`.
pub fn confidence(
    pred: &Prediction,
    item: &EvalItem,
    kind: ConfidenceKind,
    mode: F1Mode,
) -> Result<f64> {
    match kind {
        ConfidenceKind::MaxOptionF1 => {
            let (answer, _) = evalharness::answer_text(&pred.prediction);
            Ok(evalharness::option_scores(&answer, &item.options, mode)
                .into_iter()
                .fold(0.0, f64::max))
        }
        ConfidenceKind::MeanTokenProb => {
            let lp = pred
                .answer_logprobs
                .as_deref()
                .filter(|lp| !lp.is_empty())
                .ok_or_else(|| Error::MissingLogProbs(pred.item_id.clone()))?;
            Ok((lp.iter().sum::<f64>() / lp.len() as f64).exp())
        }
    }
}

/// Apply the learning criterion `valid(x) && confidence(x) > tau` and
/// rewrite each retained answer. Output keeps prediction order.
pub fn curate(
    predictions: &[Prediction],
    items: &[EvalItem],
    cfg: &CurationConfig,
) -> Result<Vec<CuratedSample>> {
    cfg.validate()?;
    let by_id: HashMap<&str, &EvalItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let kept: Vec<Option<CuratedSample>> = predictions
        .par_iter()
        .enumerate()
        .map(|(idx, pred)| {
            let item = by_id.get(pred.item_id.as_str()).ok_or_else(|| {
                Error::Data(format!("prediction for unknown item {}", pred.item_id))
            })?;
            item.validate()?;
            if !structure::parse_tagged(&pred.prediction).well_formed {
                return Ok(None);
            }
            let conf = confidence(pred, item, cfg.confidence_kind, cfg.f1_mode)?;
            if conf <= cfg.tau {
                return Ok(None);
            }
            let (answer, _) = evalharness::answer_text(&pred.prediction);
            let label = evalharness::match_option(&answer, &item.options, cfg.f1_mode);
            let (replaced_answer, replacement_mode) = if label == TIE_LABEL {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.random_seed, idx as u64]));
                let pick = item
                    .options
                    .choose(&mut rng)
                    .expect("items have >= 2 options");
                (pick.text.clone(), ReplacementMode::RandomE)
            } else {
                let text = item
                    .option_text(&label)
                    .expect("matched label is an option");
                (text.to_owned(), ReplacementMode::F1Aligned)
            };
            Ok(Some(CuratedSample {
                item_id: pred.item_id.clone(),
                original_output: pred.prediction.clone(),
                replaced_answer,
                confidence: conf,
                replacement_mode,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(kept.into_iter().flatten().collect())
}

/// Turn curated samples into prompt/think/answer records.
pub fn training_examples(samples: &[CuratedSample], items: &[EvalItem]) -> Vec<TrainingExample> {
    let by_id: HashMap<&str, &EvalItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    samples
        .iter()
        .map(|s| {
            let prompt = by_id
                .get(s.item_id.as_str())
                .map(|item| prompt_text(item))
                .unwrap_or_default();
            TrainingExample {
                prompt,
                think: structure::parse_tagged(&s.original_output).think,
                answer: s.replaced_answer.clone(),
                provenance: Provenance {
                    item_id: s.item_id.clone(),
                    confidence: s.confidence,
                    replacement_mode: s.replacement_mode,
                    original_output: s.original_output.clone(),
                },
            }
        })
        .collect()
}

/// Stimuli, question and labelled options, one per line.
pub fn prompt_text(item: &EvalItem) -> String {
    let mut lines = Vec::new();
    if !item.stimuli.is_empty() {
        lines.push(item.stimuli.clone());
    }
    if !item.question.is_empty() {
        lines.push(item.question.clone());
    }
    lines.extend(
        item.options
            .iter()
            .map(|o| format!("{}. {}", o.label, o.text)),
    );
    lines.join("\n")
}
