use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::{self, RewardConfig, ScoredComponents};
use crate::structure;
use crate::tgrpo::{self, TgrpoConfig, TokenLogProbs};
use crate::trajcache::{self, BatchRecord, GroupView, TrajectoryCache};

use super::policy::{PolicyInit, ToyPolicy, Trajectory};
use super::task::{stream_seed, Difficulty, ToyPrompt, ToyTask, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient ascent.
    #[default]
    Sgd,
    /// Adam ascent. Its per-parameter scaling turns tiny same-sign
    /// gradients into full-size steps, which can flatten a prompt whose
    /// rollouts all sit below the window mean.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Uniform,
    #[default]
    FormatPrior,
}

/// Which completions the policy-gradient term is averaged over. Advantages
/// and window means always use the whole cache window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWindow {
    /// Every cached completion, with importance ratios against the policy
    /// that sampled it.
    #[default]
    Full,
    /// Only the batch sampled this step.
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub steps: usize,
    /// Prompts per step (B).
    pub batch_prompts: usize,
    /// Completions per prompt (G).
    pub group_size: usize,
    /// Trajectory-cache capacity in batches (C).
    pub cache_capacity: usize,
    pub seed: u64,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub temperature: f64,
    pub max_len: usize,
    pub n_easy: usize,
    pub n_hard: usize,
    pub init: InitKind,
    pub prior_strength: f64,
    pub loss_window: LossWindow,
    /// Worker threads for sampling and scoring; 0 uses all cores.
    pub workers: usize,
    /// Rescale the gradient to at most this L2 norm before each update;
    /// 0 disables clipping.
    pub grad_clip: f64,
    /// Abort when |J| exceeds this.
    pub divergence_bound: f64,
    /// Sample exactly `max_len` tokens, ignoring stop tokens.
    pub fixed_length: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            steps: 315,
            batch_prompts: 8,
            group_size: 5,
            cache_capacity: trajcache::DEFAULT_CAPACITY,
            seed: 0,
            lr: 30.0,
            optimizer: Optimizer::Sgd,
            temperature: 1.0,
            max_len: 24,
            n_easy: 4,
            n_hard: 4,
            init: InitKind::FormatPrior,
            prior_strength: PRIOR_STRENGTH,
            loss_window: LossWindow::Full,
            workers: 1,
            grad_clip: GRAD_CLIP,
            divergence_bound: 1e6,
            fixed_length: false,
        }
    }
}

const PRIOR_STRENGTH: f64 = 11.0;
const GRAD_CLIP: f64 = 0.05;

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_prompts == 0 || self.cache_capacity == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "batch_prompts, cache_capacity and max_len must be >= 1".into(),
            ));
        }
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be finite and > 0".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be finite and > 0".into()));
        }
        if self.n_easy == 0 || self.n_hard == 0 {
            return Err(Error::Config("n_easy and n_hard must be >= 1".into()));
        }
        if !self.prior_strength.is_finite() {
            return Err(Error::Config("prior_strength must be finite".into()));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::Config("grad_clip must be finite and >= 0".into()));
        }
        if self.divergence_bound.is_nan() || self.divergence_bound <= 0.0 {
            return Err(Error::Config("divergence_bound must be > 0".into()));
        }
        Ok(())
    }

    pub fn policy_init(&self) -> PolicyInit {
        match self.init {
            InitKind::Uniform => PolicyInit::Uniform,
            InitKind::FormatPrior => PolicyInit::FormatPrior(self.prior_strength),
        }
    }
}

/// One sampled completion with its text segments and log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub prompt_id: usize,
    pub difficulty: Difficulty,
    pub tokens: Vec<usize>,
    pub text: String,
    pub think: String,
    pub answer: String,
    pub gold: String,
    pub logprobs: TokenLogProbs,
}

impl RolloutRecord {
    fn trajectory(&self) -> Trajectory {
        Trajectory {
            prompt_id: self.prompt_id,
            tokens: self.tokens.clone(),
            old_logprobs: self.logprobs.old.clone(),
            ref_logprobs: self.logprobs.reference.clone(),
        }
    }
}

/// Sample `g` completions for one prompt. Sample `i` draws from its own
/// stream keyed by `(seed, step, prompt_id, i)`, so results do not depend on
/// how sampling is scheduled. Current and old log-probs are both those of
/// `policy`; `reference` defaults to `policy` itself.
pub fn sample_group(
    policy: &ToyPolicy,
    reference: Option<&ToyPolicy>,
    prompt: &ToyPrompt,
    g: usize,
    seed: u64,
    step: usize,
    fixed_length: bool,
) -> Vec<RolloutRecord> {
    (0..g)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
                seed,
                step as u64,
                prompt.prompt_id as u64,
                i as u64,
            ]));
            let (tokens, logps) = policy.sample(prompt.prompt_id, fixed_length, &mut rng);
            let reference = match reference {
                Some(r) => r.path_logprobs(prompt.prompt_id, &tokens),
                None => logps.clone(),
            };
            let text = Vocab::render(&tokens);
            let parsed = structure::parse_tagged(&text);
            RolloutRecord {
                prompt_id: prompt.prompt_id,
                difficulty: prompt.difficulty,
                tokens,
                think: parsed.think,
                answer: parsed.answer,
                gold: prompt.gold_text(),
                text,
                logprobs: TokenLogProbs {
                    current: logps.clone(),
                    old: logps,
                    reference,
                },
            }
        })
        .collect()
}

/// A scored completion as stored in the trajectory cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedRollout {
    pub length: usize,
    pub f1: f64,
    pub final_reward: f64,
    pub fmt: u8,
    pub difficulty: Difficulty,
    pub trajectory: Trajectory,
}

impl GroupView for CachedRollout {
    fn output_length(&self) -> usize {
        self.length
    }
    fn f1(&self) -> f64 {
        self.f1
    }
    fn final_reward(&self) -> f64 {
        self.final_reward
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_final: f64,
    pub mean_f1: f64,
    pub format_rate: f64,
    pub mean_len_easy: f64,
    pub mean_len_hard: f64,
    /// Mean per-token KL estimate of this step's samples to the reference.
    pub mean_kl: f64,
    /// Objective at the snapshot point, before the update.
    pub objective: f64,
    pub window_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    /// Number of trailing steps averaged below.
    pub tail_steps: usize,
    pub tail_mean_f1: f64,
    pub tail_format_rate: f64,
    pub tail_mean_final: f64,
    pub tail_len_easy: f64,
    pub tail_len_hard: f64,
    pub tail_mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<StepMetrics>,
}

pub const SUMMARY_TAIL: usize = 20;

impl TrainReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn curve(&self, f: impl Fn(&StepMetrics) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    fn tail_mean(&self, tail: usize, f: impl Fn(&StepMetrics) -> f64) -> f64 {
        let start = self.rows.len().saturating_sub(tail);
        let rows = &self.rows[start..];
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    }

    /// Means over the last [`SUMMARY_TAIL`] steps.
    pub fn summary(&self) -> TrainSummary {
        let tail = SUMMARY_TAIL.min(self.rows.len());
        TrainSummary {
            steps: self.rows.len(),
            tail_steps: tail,
            tail_mean_f1: self.tail_mean(tail, |r| r.mean_f1),
            tail_format_rate: self.tail_mean(tail, |r| r.format_rate),
            tail_mean_final: self.tail_mean(tail, |r| r.mean_final),
            tail_len_easy: self.tail_mean(tail, |r| r.mean_len_easy),
            tail_len_hard: self.tail_mean(tail, |r| r.mean_len_hard),
            tail_mean_kl: self.tail_mean(tail, |r| r.mean_kl),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub cache: TrajectoryCache<CachedRollout>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent step.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p += lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn clip_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm == 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Run the training loop on a toy task.
///
/// Per step: snapshot the old policy, sample `B x G` completions, score them
/// against window statistics that include the new batch, push the batch into
/// the trajectory cache, normalize advantages over the whole window, and take
/// one ascent step on the objective. The reference policy is the initial one.
pub fn train(
    task: &ToyTask,
    reward_cfg: &RewardConfig,
    tgrpo_cfg: &TgrpoConfig,
    cfg: &LoopConfig,
) -> Result<TrainOutcome> {
    reward_cfg.validate()?;
    tgrpo_cfg.validate()?;
    cfg.validate()?;
    if task.prompts.is_empty() {
        return Err(Error::Config("task has no prompts".into()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let mut policy = ToyPolicy::new(
        task.prompts.len(),
        cfg.max_len,
        cfg.temperature,
        cfg.policy_init(),
    )?;
    let reference = policy.clone();
    let mut cache: TrajectoryCache<CachedRollout> = TrajectoryCache::new(cfg.cache_capacity)?;
    let mut adam = Adam::new(policy.logits().len());
    let mut rows = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let old = policy.clone();
        let prompts: Vec<&ToyPrompt> = (0..cfg.batch_prompts)
            .map(|j| &task.prompts[(step * cfg.batch_prompts + j) % task.prompts.len()])
            .collect();

        let (batch, components): (Vec<RolloutRecord>, Vec<ScoredComponents>) = pool.install(|| {
            let batch: Vec<RolloutRecord> = prompts
                .par_iter()
                .flat_map_iter(|p| {
                    sample_group(
                        &old,
                        Some(&reference),
                        p,
                        cfg.group_size,
                        cfg.seed,
                        step,
                        cfg.fixed_length,
                    )
                })
                .collect();
            let components = batch
                .par_iter()
                .map(|r| rewards::score_components(&r.text, &r.gold, r.tokens.len(), reward_cfg))
                .collect();
            (batch, components)
        });

        let mut pending: Vec<CachedRollout> = batch
            .iter()
            .zip(&components)
            .map(|(r, c)| CachedRollout {
                length: c.length,
                f1: c.f1,
                final_reward: 0.0,
                fmt: c.fmt,
                difficulty: r.difficulty,
                trajectory: r.trajectory(),
            })
            .collect();
        let stats = trajcache::stats_of(cache.window_with(&pending))?;
        for (p, c) in pending.iter_mut().zip(&components) {
            p.final_reward = rewards::final_reward(c, &stats, reward_cfg).final_reward;
        }

        let batch_final: Vec<f64> = pending.iter().map(|p| p.final_reward).collect();
        cache.push(BatchRecord {
            batch_id: step as u64,
            created_step: step,
            groups: pending,
        })?;

        let window = cache.window()?;
        let window_rewards: Vec<f64> = window.iter().map(|g| g.final_reward).collect();
        let advantages = tgrpo::normalized_advantages(&window_rewards, tgrpo_cfg.adv_eps);
        let skip = match cfg.loss_window {
            LossWindow::Full => 0,
            LossWindow::Current => window.len() - batch.len(),
        };
        let trajectories: Vec<Trajectory> = window[skip..]
            .iter()
            .map(|g| g.trajectory.clone())
            .collect();
        let loss_adv = &advantages[skip..];

        let objective = tgrpo::toy_objective(&policy, &trajectories, loss_adv, tgrpo_cfg)?;
        if !objective.is_finite() || objective.abs() > cfg.divergence_bound {
            return Err(Error::Diverged {
                step,
                value: objective,
            });
        }
        let mut grad = tgrpo::objective_gradient(&policy, &trajectories, loss_adv, tgrpo_cfg)?;
        clip_norm(&mut grad, cfg.grad_clip);
        match cfg.optimizer {
            Optimizer::Adam => adam.step(policy.logits_mut(), &grad, cfg.lr),
            Optimizer::Sgd => {
                for (p, g) in policy.logits_mut().iter_mut().zip(&grad) {
                    *p += cfg.lr * g;
                }
            }
        }

        let batch_lp: Vec<TokenLogProbs> = batch.iter().map(|r| r.logprobs.clone()).collect();
        let len_of = |d: Difficulty| {
            mean(
                batch
                    .iter()
                    .filter(|r| r.difficulty == d)
                    .map(|r| r.tokens.len() as f64),
            )
        };
        rows.push(StepMetrics {
            step,
            mean_final: mean(batch_final.iter().copied()),
            mean_f1: mean(components.iter().map(|c| c.f1)),
            format_rate: mean(components.iter().map(|c| f64::from(c.fmt))),
            mean_len_easy: len_of(Difficulty::Easy),
            mean_len_hard: len_of(Difficulty::Hard),
            mean_kl: tgrpo::mean_kl(&batch_lp),
            objective,
            window_groups: window.len(),
        });
    }

    Ok(TrainOutcome {
        report: TrainReport { rows },
        policy,
        reference,
        cache,
    })
}
