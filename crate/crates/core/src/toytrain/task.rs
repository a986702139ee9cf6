use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};

pub const CONTENT_TOKENS: usize = 16;

/// Answer words of the toy task.
pub const WORDS: [&str; CONTENT_TOKENS] = [
    "proud", "angry", "calm", "afraid", "happy", "sad", "jealous", "guilty", "hopeful", "lonely",
    "grateful", "anxious", "curious", "ashamed", "relieved", "bored",
];

/// Gold-answer length of a hard prompt.
pub const HARD_ANSWER_LEN: usize = 4;

/// Token inventory: 16 words, the four tags, and an end token.
pub struct Vocab;

impl Vocab {
    pub const THINK_OPEN: usize = CONTENT_TOKENS;
    pub const THINK_CLOSE: usize = CONTENT_TOKENS + 1;
    pub const ANSWER_OPEN: usize = CONTENT_TOKENS + 2;
    pub const ANSWER_CLOSE: usize = CONTENT_TOKENS + 3;
    pub const EOS: usize = CONTENT_TOKENS + 4;
    pub const SIZE: usize = CONTENT_TOKENS + 5;

    pub fn surface(tok: usize) -> &'static str {
        match tok {
            t if t < CONTENT_TOKENS => WORDS[t],
            Self::THINK_OPEN => THINK_OPEN,
            Self::THINK_CLOSE => THINK_CLOSE,
            Self::ANSWER_OPEN => ANSWER_OPEN,
            Self::ANSWER_CLOSE => ANSWER_CLOSE,
            Self::EOS => "",
            _ => panic!("token {tok} outside the toy vocabulary"),
        }
    }

    /// Render a token path as text. `<eos>` renders as nothing.
    pub fn render(tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| Self::surface(t))
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPrompt {
    pub prompt_id: usize,
    pub difficulty: Difficulty,
    pub gold: Vec<usize>,
}

impl ToyPrompt {
    pub fn gold_text(&self) -> String {
        Vocab::render(&self.gold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub seed: u64,
    pub prompts: Vec<ToyPrompt>,
}

/// SplitMix64 finalizer; derives independent stream seeds from tuples.
pub(crate) fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, &p| mix(acc ^ mix(p)))
}

/// Easy prompts come first (`0..n_easy`), then hard ones. Easy gold answers
/// are one word; hard ones are four distinct words. Each gold answer is a
/// function of `(seed, prompt_id)` alone.
pub fn generate_task(seed: u64, n_easy: usize, n_hard: usize) -> Result<ToyTask> {
    if n_easy == 0 || n_hard == 0 {
        return Err(Error::Config(
            "toy task needs >= 1 easy and >= 1 hard prompt".into(),
        ));
    }
    let prompts = (0..n_easy + n_hard)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, id as u64, 0x7A5C]));
            let (difficulty, gold) = if id < n_easy {
                (Difficulty::Easy, vec![rng.gen_range(0..CONTENT_TOKENS)])
            } else {
                let gold = index::sample(&mut rng, CONTENT_TOKENS, HARD_ANSWER_LEN).into_vec();
                (Difficulty::Hard, gold)
            };
            ToyPrompt {
                prompt_id: id,
                difficulty,
                gold,
            }
        })
        .collect();
    Ok(ToyTask { seed, prompts })
}
