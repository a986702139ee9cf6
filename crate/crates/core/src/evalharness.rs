//! Multiple-choice and free-text evaluation by token F1.
//!
//! A prediction is matched to the option with the strictly highest F1
//! against its answer text. Ties at the maximum (including all zeros) map
//! to the "not applicable" label [`TIE_LABEL`].

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure;
use crate::textnorm::{self, F1Mode};

/// Label returned when no option wins outright.
pub const TIE_LABEL: &str = "E";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledOption {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    #[serde(default)]
    pub stimuli: String,
    #[serde(default)]
    pub question: String,
    pub options: Vec<LabeledOption>,
    pub gold_label: String,
    pub gold_text: String,
}

impl EvalItem {
    /// Option labels must be unique, there must be at least two, and the
    /// gold label must name one of them.
    pub fn validate(&self) -> Result<()> {
        if self.options.len() < 2 {
            return Err(Error::Data(format!(
                "item {}: need at least 2 options",
                self.item_id
            )));
        }
        let mut seen = HashSet::new();
        for o in &self.options {
            if !seen.insert(o.label.as_str()) {
                return Err(Error::Data(format!(
                    "item {}: duplicate option label {}",
                    self.item_id, o.label
                )));
            }
        }
        if !seen.contains(self.gold_label.as_str()) {
            return Err(Error::Data(format!(
                "item {}: gold label {} is not an option",
                self.item_id, self.gold_label
            )));
        }
        Ok(())
    }

    pub fn option_text(&self, label: &str) -> Option<&str> {
        self.options
            .iter()
            .find(|o| o.label == label)
            .map(|o| o.text.as_str())
    }
}

/// One prediction line. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub prediction: String,
    /// Per-token log-probabilities of the answer segment, if the generator
    /// recorded them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_logprobs: Option<Vec<f64>>,
}

/// Where the scored answer text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    /// Answer block of a well-formed output.
    Block,
    /// First answer block found in a malformed output.
    Extracted,
    /// Malformed output without any answer block; the whole text is used.
    Raw,
}

/// Text to score for a prediction, plus where it came from.
pub fn answer_text(prediction: &str) -> (String, AnswerSource) {
    let parsed = structure::parse_tagged(prediction);
    if parsed.well_formed {
        (parsed.answer, AnswerSource::Block)
    } else if prediction.contains(structure::ANSWER_OPEN)
        && prediction.contains(structure::ANSWER_CLOSE)
        && !parsed.answer.trim().is_empty()
    {
        (parsed.answer, AnswerSource::Extracted)
    } else {
        (prediction.to_owned(), AnswerSource::Raw)
    }
}

/// Per-option F1 scores of `answer`, in option order.
pub fn option_scores(answer: &str, options: &[LabeledOption], mode: F1Mode) -> Vec<f64> {
    options
        .iter()
        .map(|o| textnorm::token_f1(answer, &o.text, mode).f1)
        .collect()
}

/// Label of the option with the strictly highest F1, or [`TIE_LABEL`].
pub fn match_option(answer: &str, options: &[LabeledOption], mode: F1Mode) -> String {
    let scores = option_scores(answer, options, mode);
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut winners = scores.iter().enumerate().filter(|(_, s)| **s == best);
    match (winners.next(), winners.next()) {
        (Some((i, _)), None) => options[i].label.clone(),
        _ => TIE_LABEL.to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub item_id: String,
    pub well_formed: bool,
    pub answer_source: AnswerSource,
    pub answer: String,
    pub f1: f64,
    pub matched: String,
    pub gold_label: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_items: usize,
    pub mean_f1: f64,
    pub accuracy: f64,
    /// Fraction of items matched to [`TIE_LABEL`].
    pub tie_rate: f64,
    pub f1_mode: F1Mode,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let id_w = self
            .rows
            .iter()
            .map(|r| r.item_id.len())
            .max()
            .unwrap_or(0)
            .max(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<id_w$}  {:>6}  {:>5}  {:>4}  {:>7}  {:<9}",
            "item", "f1", "match", "gold", "correct", "source"
        );
        for r in &self.rows {
            let source = match r.answer_source {
                AnswerSource::Block => "block",
                AnswerSource::Extracted => "extracted",
                AnswerSource::Raw => "raw",
            };
            let _ = writeln!(
                out,
                "{:<id_w$}  {:>6.4}  {:>5}  {:>4}  {:>7}  {:<9}",
                r.item_id,
                r.f1,
                r.matched,
                r.gold_label,
                if r.correct { "yes" } else { "no" },
                source
            );
        }
        let _ = writeln!(
            out,
            "n = {}  mean_f1 = {:.4}  accuracy = {:.4}  tie_rate = {:.4}",
            self.n_items, self.mean_f1, self.accuracy, self.tie_rate
        );
        out
    }
}

/// Score every item against its prediction. Predictions for unknown items
/// are ignored; an item without a prediction is an error.
pub fn evaluate(
    items: &[EvalItem],
    predictions: &[Prediction],
    mode: F1Mode,
) -> Result<EvalReport> {
    for item in items {
        item.validate()?;
    }
    let by_id: HashMap<&str, &Prediction> = predictions
        .iter()
        .map(|p| (p.item_id.as_str(), p))
        .collect();
    let rows = items
        .par_iter()
        .map(|item| {
            let pred = by_id
                .get(item.item_id.as_str())
                .ok_or_else(|| Error::MissingPrediction(item.item_id.clone()))?;
            let (answer, answer_source) = answer_text(&pred.prediction);
            let matched = match_option(&answer, &item.options, mode);
            Ok(EvalRow {
                item_id: item.item_id.clone(),
                well_formed: answer_source == AnswerSource::Block,
                f1: textnorm::token_f1(&answer, &item.gold_text, mode).f1,
                correct: matched == item.gold_label,
                gold_label: item.gold_label.clone(),
                matched,
                answer_source,
                answer,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = rows.len();
    let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let mean_f1 = if n == 0 {
        0.0
    } else {
        rows.iter().map(|r| r.f1).sum::<f64>() / n as f64
    };
    Ok(EvalReport {
        n_items: n,
        mean_f1,
        accuracy: frac(rows.iter().filter(|r| r.correct).count()),
        tie_rate: frac(rows.iter().filter(|r| r.matched == TIE_LABEL).count()),
        f1_mode: mode,
        rows,
    })
}

/// Parse JSON lines, skipping blank ones. Errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}
