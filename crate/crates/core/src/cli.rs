//! Command implementations behind the `bilateral` binary. Each takes parsed
//! inputs and writers so it can be driven from tests.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::curator::{self, CurationConfig, TrainingExample};
use crate::error::{Error, Result};
use crate::evalharness::{self, EvalItem, EvalReport, Prediction};
use crate::rewards::{self, BatchStats, RewardBreakdown, RewardConfig};
use crate::structure;
use crate::textnorm::F1Mode;
use crate::tgrpo::{self, TgrpoConfig, TokenLogProbs};
use crate::toytrain::{self, TrainSummary};
use crate::trajcache::{GroupSummary, TrajectoryCache};

/// One rollout to score. `length` defaults to the token count of `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub output: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub length: usize,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
    /// `None` when there was nothing to score.
    pub window_stats: Option<BatchStats>,
}

impl ScoreReport {
    /// One breakdown per line, then a `{"window_stats": ...}` line. An empty
    /// report writes nothing.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        if let Some(stats) = &self.window_stats {
            serde_json::to_writer(&mut out, &serde_json::json!({ "window_stats": stats }))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Score a file of rollouts as one batch: window means are taken over every
/// rollout in the input.
pub fn score<R: BufRead>(input: R, cfg: &RewardConfig) -> Result<ScoreReport> {
    let inputs: Vec<ScoreInput> = evalharness::read_jsonl(input)?;
    if inputs.is_empty() {
        return Ok(ScoreReport {
            rows: Vec::new(),
            window_stats: None,
        });
    }
    let components: Vec<_> = inputs
        .iter()
        .map(|r| {
            let length = r
                .length
                .unwrap_or_else(|| structure::output_length(&r.output));
            rewards::score_components(&r.output, &r.gold, length, cfg)
        })
        .collect();
    let stats = rewards::window_stats(components.iter().map(|c| (c.length, c.f1)))?;
    let rows = inputs
        .into_iter()
        .zip(&components)
        .map(|(r, c)| ScoreRow {
            id: r.id,
            length: c.length,
            breakdown: rewards::final_reward(c, &stats, cfg),
        })
        .collect();
    Ok(ScoreReport {
        rows,
        window_stats: Some(stats),
    })
}

/// Files written by [`train`], relative to the output directory.
pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const POLICY_FILE: &str = "policy.json";
pub const CACHE_FILE: &str = "cache.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// Run toy training and write the report, summary, final policy, cache
/// checkpoint and the effective config into `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let task = toytrain::generate_task(cfg.train.seed, cfg.train.n_easy, cfg.train.n_hard)?;
    let outcome = toytrain::train(&task, &cfg.reward, &cfg.tgrpo, &cfg.train)?;
    std::fs::create_dir_all(out_dir)?;

    let mut report = BufWriter::new(File::create(out_dir.join(REPORT_FILE))?);
    outcome.report.write_jsonl(&mut report)?;
    report.flush()?;

    let summary = outcome.report.summary();
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    write_json(&out_dir.join(POLICY_FILE), &outcome.policy)?;

    let mut cache = BufWriter::new(File::create(out_dir.join(CACHE_FILE))?);
    outcome.cache.write_jsonl(&mut cache)?;
    cache.flush()?;

    std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml_string())?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn eval<R1: BufRead, R2: BufRead>(
    items: R1,
    predictions: R2,
    mode: F1Mode,
) -> Result<EvalReport> {
    let items: Vec<EvalItem> = evalharness::read_jsonl(items)?;
    let preds: Vec<Prediction> = evalharness::read_jsonl(predictions)?;
    evalharness::evaluate(&items, &preds, mode)
}

pub fn curate<R1: BufRead, R2: BufRead>(
    items: R1,
    predictions: R2,
    cfg: &CurationConfig,
) -> Result<Vec<TrainingExample>> {
    let items: Vec<EvalItem> = evalharness::read_jsonl(items)?;
    let preds: Vec<Prediction> = evalharness::read_jsonl(predictions)?;
    let kept = curator::curate(&preds, &items, cfg)?;
    Ok(curator::training_examples(&kept, &items))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheInspection {
    pub batches: usize,
    pub groups: usize,
    pub batch_ids: Vec<u64>,
    pub window_stats: BatchStats,
    /// Mean final reward per cached batch, oldest first.
    pub trend: Vec<f64>,
}

/// Summarize a cache checkpoint. Every record in the file is kept.
pub fn inspect_cache(text: &str) -> Result<CacheInspection> {
    let n = text.lines().filter(|l| !l.trim().is_empty()).count();
    let cache: TrajectoryCache<GroupSummary> =
        TrajectoryCache::read_jsonl(text.as_bytes(), n.max(1))?;
    Ok(CacheInspection {
        batches: cache.len(),
        groups: cache.records().map(|r| r.groups.len()).sum(),
        batch_ids: cache.records().map(|r| r.batch_id).collect(),
        window_stats: cache.window_stats()?,
        trend: cache.trend()?,
    })
}

/// One completion for the objective inspector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveInput {
    pub final_reward: f64,
    pub logprobs: TokenLogProbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub groups: usize,
    pub advantages: Vec<f64>,
    pub objective: f64,
    pub mean_kl: f64,
}

/// Advantages, objective and mean KL of a window of completions.
pub fn objective<R: BufRead>(input: R, cfg: &TgrpoConfig) -> Result<ObjectiveReport> {
    let groups: Vec<ObjectiveInput> = evalharness::read_jsonl(input)?;
    if groups.is_empty() {
        return Err(Error::EmptyWindow(
            "objective needs at least one completion",
        ));
    }
    let rewards: Vec<f64> = groups.iter().map(|g| g.final_reward).collect();
    let lps: Vec<TokenLogProbs> = groups.into_iter().map(|g| g.logprobs).collect();
    let advantages = tgrpo::normalized_advantages(&rewards, cfg.adv_eps);
    let objective = tgrpo::objective(&lps, &advantages, cfg)?;
    Ok(ObjectiveReport {
        groups: lps.len(),
        mean_kl: tgrpo::mean_kl(&lps),
        advantages,
        objective,
    })
}
