//! Per-prompt positional categorical policy.
//!
//! The logit table is indexed by `(prompt, position, token)`; the
//! distribution at a position does not depend on earlier tokens, so
//! `d log pi / d logits` is exact and cheap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tgrpo::TokenLogProbs;

use super::task::{Vocab, CONTENT_TOKENS};

/// How the logit table is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyInit {
    /// All logits zero.
    Uniform,
    /// A tag-template prior shared by every prompt: `<think> </think>
    /// <answer>` at positions 0-2 with probability `sigmoid(strength)` each,
    /// then answer words, with `</answer>` as likely as another word from
    /// position 4 on. Knows nothing about any prompt's answer or its length.
    FormatPrior(f64),
}

/// A sampled completion with the log-probabilities needed by the
/// objective: `old` under the policy that sampled it and `reference`
/// under the frozen reference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_id: usize,
    pub tokens: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    n_prompts: usize,
    max_len: usize,
    vocab_size: usize,
    temperature: f64,
    logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(
        n_prompts: usize,
        max_len: usize,
        temperature: f64,
        init: PolicyInit,
    ) -> Result<Self> {
        if n_prompts == 0 || max_len == 0 {
            return Err(Error::Config(
                "policy needs >= 1 prompt and max_len >= 1".into(),
            ));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config("temperature must be finite and > 0".into()));
        }
        let vocab_size = Vocab::SIZE;
        let mut logits = vec![0.0; n_prompts * max_len * vocab_size];
        if let PolicyInit::FormatPrior(s) = init {
            let row = Self::prior_row(max_len, s);
            for chunk in logits.chunks_mut(max_len * vocab_size) {
                chunk.copy_from_slice(&row);
            }
        }
        Ok(ToyPolicy {
            n_prompts,
            max_len,
            vocab_size,
            temperature,
            logits,
        })
    }

    fn prior_row(max_len: usize, s: f64) -> Vec<f64> {
        let v = Vocab::SIZE;
        let mut row = vec![0.0; max_len * v];
        for pos in 0..max_len {
            let at = |tok: usize| pos * v + tok;
            // one tag against V - 1 zero logits: p = sigmoid(s)
            let tag = s + ((v - 1) as f64).ln();
            match pos {
                0 => row[at(Vocab::THINK_OPEN)] = tag,
                1 => row[at(Vocab::THINK_CLOSE)] = tag,
                2 => row[at(Vocab::ANSWER_OPEN)] = tag,
                _ => {
                    for w in 0..CONTENT_TOKENS {
                        row[at(w)] = s;
                    }
                    if pos > 3 {
                        row[at(Vocab::ANSWER_CLOSE)] = s + (CONTENT_TOKENS as f64).ln();
                    }
                }
            }
        }
        row
    }

    /// Replace the logit table, e.g. when restoring a snapshot.
    pub fn from_parts(
        n_prompts: usize,
        max_len: usize,
        temperature: f64,
        logits: Vec<f64>,
    ) -> Result<Self> {
        let mut p = ToyPolicy::new(n_prompts, max_len, temperature, PolicyInit::Uniform)?;
        if logits.len() != p.logits.len() {
            return Err(Error::LengthMismatch(format!(
                "expected {} logits, got {}",
                p.logits.len(),
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("logits must be finite".into()));
        }
        p.logits = logits;
        Ok(p)
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Flat index of `(prompt, pos, tok)` in [`ToyPolicy::logits`].
    pub fn index(&self, prompt: usize, pos: usize, tok: usize) -> usize {
        (prompt * self.max_len + pos) * self.vocab_size + tok
    }

    fn row(&self, prompt: usize, pos: usize) -> &[f64] {
        let start = self.index(prompt, pos, 0);
        &self.logits[start..start + self.vocab_size]
    }

    /// `log softmax(logits / T)` at one position.
    pub fn log_probs(&self, prompt: usize, pos: usize) -> Vec<f64> {
        let scaled: Vec<f64> = self
            .row(prompt, pos)
            .iter()
            .map(|z| z / self.temperature)
            .collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        scaled.iter().map(|z| z - lse).collect()
    }

    pub fn probs(&self, prompt: usize, pos: usize) -> Vec<f64> {
        self.log_probs(prompt, pos)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    pub fn token_logprob(&self, prompt: usize, pos: usize, tok: usize) -> f64 {
        self.log_probs(prompt, pos)[tok]
    }

    /// Log-probabilities of a token path under this policy.
    pub fn path_logprobs(&self, prompt: usize, tokens: &[usize]) -> Vec<f64> {
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &tok)| self.token_logprob(prompt, pos, tok))
            .collect()
    }

    /// Current/old/reference log-probabilities of a stored trajectory.
    pub fn token_logprobs(&self, traj: &Trajectory) -> TokenLogProbs {
        TokenLogProbs {
            current: self.path_logprobs(traj.prompt_id, &traj.tokens),
            old: traj.old_logprobs.clone(),
            reference: traj.ref_logprobs.clone(),
        }
    }

    /// Sample one completion. Generation stops after `<eos>` or
    /// `</answer>` unless `fixed_length` is set, in which case exactly
    /// `max_len` tokens are drawn.
    pub fn sample<R: Rng>(
        &self,
        prompt: usize,
        fixed_length: bool,
        rng: &mut R,
    ) -> (Vec<usize>, Vec<f64>) {
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        for pos in 0..self.max_len {
            let lp = self.log_probs(prompt, pos);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = lp.len() - 1;
            for (k, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    tok = k;
                    break;
                }
            }
            tokens.push(tok);
            logps.push(lp[tok]);
            if !fixed_length && (tok == Vocab::EOS || tok == Vocab::ANSWER_CLOSE) {
                break;
            }
        }
        (tokens, logps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_are_distributions() {
        for init in [PolicyInit::Uniform, PolicyInit::FormatPrior(3.0)] {
            let p = ToyPolicy::new(3, 10, 0.7, init).unwrap();
            for prompt in 0..3 {
                for pos in 0..10 {
                    let s: f64 = p.probs(prompt, pos).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn prior_favours_template() {
        let p = ToyPolicy::new(1, 8, 1.0, PolicyInit::FormatPrior(3.0)).unwrap();
        let argmax = |pos: usize| {
            let pr = p.probs(0, pos);
            (0..pr.len())
                .max_by(|&a, &b| pr[a].total_cmp(&pr[b]))
                .unwrap()
        };
        assert_eq!(argmax(0), Vocab::THINK_OPEN);
        assert_eq!(argmax(1), Vocab::THINK_CLOSE);
        assert_eq!(argmax(2), Vocab::ANSWER_OPEN);
        // all answer words equally likely; no word is preferred
        let pr = p.probs(0, 3);
        assert!((pr[0] - pr[CONTENT_TOKENS - 1]).abs() < 1e-15);
        // later positions split evenly between closing and another word
        let pr = p.probs(0, 5);
        let words: f64 = pr[..CONTENT_TOKENS].iter().sum();
        assert!((words - pr[Vocab::ANSWER_CLOSE]).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ToyPolicy::new(0, 4, 1.0, PolicyInit::Uniform).is_err());
        assert!(ToyPolicy::new(1, 4, 0.0, PolicyInit::Uniform).is_err());
        assert!(ToyPolicy::from_parts(1, 2, 1.0, vec![0.0; 3]).is_err());
        let ok = ToyPolicy::from_parts(1, 2, 1.0, vec![0.5; 2 * Vocab::SIZE]).unwrap();
        assert_eq!(ok.logits()[0], 0.5);
    }

    #[test]
    fn sampled_logprobs_match_table() {
        let p = ToyPolicy::new(2, 12, 1.0, PolicyInit::FormatPrior(3.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (toks, lps) = p.sample(1, false, &mut rng);
            assert_eq!(lps, p.path_logprobs(1, &toks));
            let last = *toks.last().unwrap();
            assert!(toks.len() == 12 || last == Vocab::EOS || last == Vocab::ANSWER_CLOSE);
        }
        let (toks, _) = p.sample(0, true, &mut rng);
        assert_eq!(toks.len(), 12);
    }
}
