//! Tagged-output grammar, binary format reward, and 4-gram repetition.
//!
//! A well-formed completion is exactly
//! `ws* <think> T </think> ws* <answer> A </answer> ws*` where neither `T`
//! nor `A` contains any of the four tags. Tags are case-sensitive.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::textnorm;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// Default n-gram order for the repetition statistic.
pub const REPETITION_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaggedOutput {
    pub think: String,
    pub answer: String,
    pub well_formed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionStats {
    pub total_ngrams: usize,
    pub repeated_ngrams: usize,
    pub ratio: f64,
}

fn contains_tag(s: &str) -> bool {
    TAGS.iter().any(|t| s.contains(t))
}

fn block<'a>(s: &'a str, open: &str, close: &str) -> Option<(&'a str, &'a str)> {
    let rest = s.strip_prefix(open)?;
    let end = rest.find(close)?;
    let inner = &rest[..end];
    if contains_tag(inner) {
        return None;
    }
    Some((inner, &rest[end + close.len()..]))
}

fn parse_strict(output: &str) -> Option<(&str, &str)> {
    let (think, rest) = block(output.trim_start(), THINK_OPEN, THINK_CLOSE)?;
    let (answer, rest) = block(rest.trim_start(), ANSWER_OPEN, ANSWER_CLOSE)?;
    rest.trim().is_empty().then_some((think, answer))
}

/// Contents of the first `open ... close` span anywhere in `s`, if any.
fn first_span<'a>(s: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = s.find(open)? + open.len();
    let len = s[start..].find(close)?;
    Some(&s[start..start + len])
}

/// Parse a completion against the think-then-answer grammar.
///
/// Malformed input still yields whatever think/answer spans can be found,
/// with `well_formed = false`.
pub fn parse_tagged(output: &str) -> TaggedOutput {
    match parse_strict(output) {
        Some((think, answer)) => TaggedOutput {
            think: think.to_owned(),
            answer: answer.to_owned(),
            well_formed: true,
        },
        None => TaggedOutput {
            think: first_span(output, THINK_OPEN, THINK_CLOSE)
                .unwrap_or_default()
                .to_owned(),
            answer: first_span(output, ANSWER_OPEN, ANSWER_CLOSE)
                .unwrap_or_default()
                .to_owned(),
            well_formed: false,
        },
    }
}

pub fn format_reward(output: &str) -> u8 {
    u8::from(parse_tagged(output).well_formed)
}

/// Length of a completion in tokens: each tag counts as one token and the
/// remaining text is split on whitespace.
pub fn output_length(output: &str) -> usize {
    let mut tags = 0;
    let mut text = output.to_owned();
    for tag in TAGS {
        tags += text.matches(tag).count();
        text = text.replace(tag, " ");
    }
    tags + text.split_whitespace().count()
}

/// Stride-1 n-gram repetition. An occurrence is repeated when the same
/// n-gram already appeared at an earlier position.
pub fn ngram_repetition<S: AsRef<str> + Eq + std::hash::Hash>(
    tokens: &[S],
    n: usize,
    eps: f64,
) -> RepetitionStats {
    assert!(n >= 1, "n-gram order must be at least 1");
    if tokens.len() < n {
        return RepetitionStats {
            total_ngrams: 0,
            repeated_ngrams: 0,
            ratio: 0.0,
        };
    }
    let total = tokens.len() - n + 1;
    let distinct: HashSet<&[S]> = tokens.windows(n).collect();
    let repeated = total - distinct.len();
    RepetitionStats {
        total_ngrams: total,
        repeated_ngrams: repeated,
        ratio: repeated as f64 / (total as f64 + eps),
    }
}

/// Capped 4-gram repetition ratio of a think segment. Nonnegative; callers
/// subtract it.
pub fn repetition_penalty(think: &str, tau_rep: f64, eps: f64) -> f64 {
    let tokens = textnorm::tokenize(think);
    tau_rep.min(ngram_repetition(&tokens, REPETITION_ORDER, eps).ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-8;

    /// Grammar oracle: the sequence of tags must be exactly the four tags in
    /// order and everything outside the two blocks must be whitespace.
    fn grammar_oracle(s: &str) -> bool {
        let mut hits: Vec<(usize, &str)> = Vec::new();
        for tag in TAGS {
            for (i, _) in s.match_indices(tag) {
                hits.push((i, tag));
            }
        }
        hits.sort();
        let seq: Vec<&str> = hits.iter().map(|h| h.1).collect();
        if seq != TAGS {
            return false;
        }
        let gaps = [
            &s[..hits[0].0],
            &s[hits[1].0 + THINK_CLOSE.len()..hits[2].0],
            &s[hits[3].0 + ANSWER_CLOSE.len()..],
        ];
        gaps.iter().all(|g| g.chars().all(char::is_whitespace))
    }

    #[test]
    fn parses_canonical_form() {
        let t = parse_tagged("<think>x</think><answer>y</answer>");
        assert!(t.well_formed);
        assert_eq!(t.think, "x");
        assert_eq!(t.answer, "y");
    }

    #[test]
    fn keeps_inner_whitespace_verbatim() {
        let t = parse_tagged("  <think> a b </think>\n<answer> Proud </answer>\n");
        assert!(t.well_formed);
        assert_eq!(t.think, " a b ");
        assert_eq!(t.answer, " Proud ");
    }

    #[test]
    fn rejects_malformed() {
        assert!(!parse_tagged("<think>x</think>").well_formed);
        assert!(!parse_tagged("<answer>y</answer><think>x</think>").well_formed);
        assert!(!parse_tagged("<think>x</think><answer>y</answer><answer>z</answer>").well_formed);
        assert!(!parse_tagged("<think><think>x</think></think><answer>y</answer>").well_formed);
        assert!(!parse_tagged("<THINK>x</THINK><answer>y</answer>").well_formed);
        assert!(!parse_tagged("hi <think>x</think><answer>y</answer>").well_formed);
        assert_eq!(format_reward(""), 0);
        assert_eq!(format_reward("<think></think> <answer></answer>"), 1);
    }

    #[test]
    fn malformed_still_extracts_answer() {
        let t = parse_tagged("<answer>y</answer><think>x</think>");
        assert!(!t.well_formed);
        assert_eq!(t.answer, "y");
        assert_eq!(t.think, "x");
    }

    #[test]
    fn counts_output_length() {
        assert_eq!(output_length("<think>a b</think> <answer>c</answer>"), 7);
        assert_eq!(output_length(""), 0);
    }

    #[test]
    fn ngram_examples() {
        let toks: Vec<&str> = "a b c a b c a b c d".split(' ').collect();
        let s = ngram_repetition(&toks, 4, EPS);
        assert_eq!((s.total_ngrams, s.repeated_ngrams), (7, 3));
        assert_eq!(s.ratio, 3.0 / (7.0 + EPS));

        let toks: Vec<&str> = "a b c d e".split(' ').collect();
        let s = ngram_repetition(&toks, 4, EPS);
        assert_eq!((s.total_ngrams, s.repeated_ngrams, s.ratio), (2, 0, 0.0));

        let toks = ["a"; 7];
        let s = ngram_repetition(&toks, 4, EPS);
        assert_eq!((s.total_ngrams, s.repeated_ngrams), (4, 3));
        assert!((s.ratio - 0.75).abs() < 1e-8);

        let s = ngram_repetition(&["a", "b"], 4, EPS);
        assert_eq!((s.total_ngrams, s.ratio), (0, 0.0));
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(repetition_penalty("one two three four five", 0.5, EPS), 0.0);
        assert_eq!(repetition_penalty("a a a a a a a", 0.5, EPS), 0.5);
        let p = repetition_penalty("a b c a b c a b c d", 0.5, EPS);
        assert_eq!(p, 3.0 / (7.0 + EPS));
        // punctuation does not create distinct 4-grams
        assert_eq!(
            repetition_penalty("A, b c. a b c a B c d", 0.5, EPS),
            3.0 / (7.0 + EPS)
        );
    }

    fn tagged_pieces() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop::sample::select(vec![
                THINK_OPEN,
                THINK_CLOSE,
                ANSWER_OPEN,
                ANSWER_CLOSE,
                " ",
                "\n",
                "x",
                "why",
                "<",
                ">",
            ]),
            0..9,
        )
        .prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn parser_agrees_with_grammar_oracle(s in tagged_pieces()) {
            let t = parse_tagged(&s);
            prop_assert_eq!(t.well_formed, grammar_oracle(&s));
            prop_assert_eq!(u8::from(t.well_formed), format_reward(&s));
        }

        #[test]
        fn generated_well_formed_outputs_parse(
            lead in "[ \n]{0,2}", think in "[a-z ]{0,12}", mid in "[ \n]{0,2}",
            answer in "[a-z ]{0,12}", tail in "[ \n]{0,2}",
        ) {
            let s = format!("{lead}<think>{think}</think>{mid}<answer>{answer}</answer>{tail}");
            let t = parse_tagged(&s);
            prop_assert!(t.well_formed);
            prop_assert_eq!(t.think, think);
            prop_assert_eq!(t.answer, answer);
        }

        #[test]
        fn penalty_is_bounded(toks in prop::collection::vec(0u8..4, 0..40), tau in 0.0f64..1.0) {
            let text: Vec<String> = toks.iter().map(|t| format!("w{t}")).collect();
            let p = repetition_penalty(&text.join(" "), tau, EPS);
            prop_assert!((0.0..=tau).contains(&p));
        }

        #[test]
        fn distinct_ngrams_give_zero(len in 0usize..30) {
            let text: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
            prop_assert_eq!(repetition_penalty(&text.join(" "), 0.5, EPS), 0.0);
        }

        #[test]
        fn penalty_monotone_in_repeats(total in 1usize..40, a in 0usize..40, b in 0usize..40) {
            // distinct prefix of `total - k - 1` words followed by a run of
            // `k + 4` copies of one word: `total` 4-grams, `k` repeated
            let build = |k: usize| {
                let mut toks: Vec<String> = (0..total - k - 1).map(|i| format!("w{i}")).collect();
                toks.extend(std::iter::repeat_n("z".to_owned(), k + 4));
                toks
            };
            let (lo, hi) = (a.min(b).min(total - 1), a.max(b).min(total - 1));
            let (tl, th) = (build(lo), build(hi));
            let sl = ngram_repetition(&tl, 4, EPS);
            let sh = ngram_repetition(&th, 4, EPS);
            prop_assert_eq!((sl.total_ngrams, sl.repeated_ngrams), (total, lo));
            prop_assert_eq!((sh.total_ngrams, sh.repeated_ngrams), (total, hi));
            prop_assert!(repetition_penalty(&tl.join(" "), 0.5, EPS) <= repetition_penalty(&th.join(" "), 0.5, EPS));
        }
    }
}
