//! FIFO window over the most recent batch records.
//!
//! The union of the cached batches is the statistics basis for window means,
//! advantage normalization, and the outer average of the objective. Beyond
//! enlarging that basis the cache does not alter rewards; [`TrajectoryCache::trend`]
//! is a read-only diagnostic.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::{self, BatchStats};

/// What the cache needs to know about one completion.
pub trait GroupView {
    fn output_length(&self) -> usize;
    fn f1(&self) -> f64;
    fn final_reward(&self) -> f64;
}

/// Summary of one scored completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub length: usize,
    pub f1: f64,
    pub final_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_ref: Option<String>,
}

impl GroupView for GroupSummary {
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
pub struct BatchRecord<T = GroupSummary> {
    pub batch_id: u64,
    pub created_step: usize,
    pub groups: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryCache<T = GroupSummary> {
    capacity: usize,
    records: VecDeque<BatchRecord<T>>,
    last_id: Option<u64>,
}

pub const DEFAULT_CAPACITY: usize = 4;

impl<T> TrajectoryCache<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("cache capacity must be >= 1".into()));
        }
        Ok(TrajectoryCache {
            capacity,
            records: VecDeque::with_capacity(capacity + 1),
            last_id: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &BatchRecord<T>> {
        self.records.iter()
    }

    /// Append a record, evicting the oldest one when over capacity.
    pub fn push(&mut self, record: BatchRecord<T>) -> Result<Option<BatchRecord<T>>> {
        if let Some(last) = self.last_id {
            if record.batch_id <= last {
                return Err(Error::OutOfOrderBatch {
                    got: record.batch_id,
                    last,
                });
            }
        }
        if record.groups.is_empty() {
            return Err(Error::EmptyWindow("batch record has no groups"));
        }
        self.last_id = Some(record.batch_id);
        self.records.push_back(record);
        Ok(if self.records.len() > self.capacity {
            self.records.pop_front()
        } else {
            None
        })
    }

    /// All cached groups in push order.
    pub fn window(&self) -> Result<Vec<&T>> {
        if self.records.is_empty() {
            return Err(Error::EmptyWindow("trajectory cache is empty"));
        }
        Ok(self.records.iter().flat_map(|r| r.groups.iter()).collect())
    }

    /// The window as it will look once `pending` is pushed: the newest
    /// `capacity - 1` cached batches followed by `pending`.
    pub fn window_with<'a>(&'a self, pending: &'a [T]) -> Vec<&'a T> {
        let skip = (self.records.len() + 1).saturating_sub(self.capacity);
        self.records
            .iter()
            .skip(skip)
            .flat_map(|r| r.groups.iter())
            .chain(pending.iter())
            .collect()
    }
}

impl<T: GroupView> TrajectoryCache<T> {
    pub fn window_stats(&self) -> Result<BatchStats> {
        stats_of(self.window()?)
    }

    pub fn final_rewards(&self) -> Result<Vec<f64>> {
        Ok(self
            .window()?
            .into_iter()
            .map(GroupView::final_reward)
            .collect())
    }

    /// Mean final reward of each cached batch, oldest first.
    pub fn trend(&self) -> Result<Vec<f64>> {
        if self.records.is_empty() {
            return Err(Error::EmptyWindow("trajectory cache is empty"));
        }
        Ok(self
            .records
            .iter()
            .map(|r| {
                r.groups.iter().map(GroupView::final_reward).sum::<f64>() / r.groups.len() as f64
            })
            .collect())
    }
}

/// Window statistics over any sequence of groups.
pub fn stats_of<'a, T: GroupView + 'a>(
    groups: impl IntoIterator<Item = &'a T>,
) -> Result<BatchStats> {
    rewards::window_stats(groups.into_iter().map(|g| (g.output_length(), g.f1())))
}

impl<T: Serialize> TrajectoryCache<T> {
    /// One JSON object per cached batch, oldest first.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<T: DeserializeOwned> TrajectoryCache<T> {
    /// Rebuild a cache from a checkpoint written by [`TrajectoryCache::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(input: R, capacity: usize) -> Result<Self> {
        let mut cache = TrajectoryCache::new(capacity)?;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: BatchRecord<T> = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            cache.push(record).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cache)
    }
}
