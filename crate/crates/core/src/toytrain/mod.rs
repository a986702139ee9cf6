//! Desk-scale end-to-end check of the reward and objective: a synthetic
//! tagged-QA task, a positional categorical policy, and the training loop.
//!
//! Easy prompts have a one-word gold answer; hard prompts need four distinct
//! words, so a concise answer caps recall on them.

pub mod policy;
pub mod task;
pub mod train;

pub use policy::{PolicyInit, ToyPolicy, Trajectory};
pub use task::{generate_task, Difficulty, ToyPrompt, ToyTask, Vocab};
pub use train::{
    sample_group, train, CachedRollout, InitKind, LoopConfig, LossWindow, Optimizer, RolloutRecord,
    StepMetrics, TrainOutcome, TrainReport, TrainSummary,
};
