use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DistillReduction, GeneratorLossWeights, TaskLossWeights};
use crate::nets::DEFAULT_GENERATOR_DEPTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Cross-entropy on the current task only.
    Finetune,
    /// Adds exemplar cross-entropy and feature distillation.
    Replay,
    /// Replay plus pixel-level MixUp of exemplars with unlabeled images.
    ReplayMixup,
    /// Replay plus feature maps produced by the per-class generators.
    ReplayGenerator,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Finetune,
        Strategy::Replay,
        Strategy::ReplayMixup,
        Strategy::ReplayGenerator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Finetune => "finetune",
            Strategy::Replay => "replay",
            Strategy::ReplayMixup => "replay_mixup",
            Strategy::ReplayGenerator => "replay_generator",
        }
    }

    pub fn uses_memory(self) -> bool {
        self != Strategy::Finetune
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub task_epochs: usize,
    pub gen_epochs: usize,
    pub lr: f64,
    /// Multiplier applied once two thirds of the task epochs are done.
    pub lr_decay: f64,
    pub momentum: f64,
    pub gen_lr: f64,
    pub gen_momentum: f64,
    /// Joint gradient-norm cap for task training steps.
    pub grad_clip: Option<f64>,
    /// Joint gradient-norm cap for generator training steps.
    pub gen_grad_clip: Option<f64>,
    pub batch_size: usize,
    pub exemplar_batch: usize,
    pub gen_batch: usize,
    /// Generated (or mixed) counterparts per replayed exemplar.
    pub n_generated: usize,
    /// Feed generated maps to `f2` as constants instead of backpropagating
    /// through the frozen generator into `f1`.
    pub detach_generated: bool,
    pub generator_depth: usize,
    pub mixup_alpha: f64,
    pub gram_normalize: bool,
    pub distill_reduction: DistillReduction,
    pub generator_loss: GeneratorLossWeights,
    pub task_loss: TaskLossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::ReplayGenerator,
            task_epochs: 30,
            gen_epochs: 20,
            lr: 0.1,
            lr_decay: 0.1,
            momentum: 0.9,
            gen_lr: 0.05,
            gen_momentum: 0.9,
            grad_clip: Some(1.0),
            gen_grad_clip: Some(1.0),
            batch_size: 32,
            exemplar_batch: 16,
            gen_batch: 4,
            n_generated: 2,
            detach_generated: false,
            generator_depth: DEFAULT_GENERATOR_DEPTH,
            mixup_alpha: 0.2,
            gram_normalize: true,
            distill_reduction: DistillReduction::Mean,
            generator_loss: GeneratorLossWeights::default(),
            task_loss: TaskLossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("train.{f}"), m));
        if self.task_epochs == 0 {
            return bad("task_epochs", "must be positive");
        }
        for (name, v) in [("batch_size", self.batch_size), ("exemplar_batch", self.exemplar_batch), ("gen_batch", self.gen_batch)] {
            if v == 0 {
                return bad(name, "must be positive");
            }
        }
        if self.generator_depth == 0 {
            return bad("generator_depth", "must be positive");
        }
        for (name, v) in [
            ("lr", self.lr),
            ("gen_lr", self.gen_lr),
            ("lr_decay", self.lr_decay),
            ("momentum", self.momentum),
            ("gen_momentum", self.gen_momentum),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, "must be finite and non-negative");
            }
        }
        for (name, v) in [("grad_clip", self.grad_clip), ("gen_grad_clip", self.gen_grad_clip)] {
            if v.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
                return bad(name, "must be positive when set");
            }
        }
        if !(self.mixup_alpha.is_finite() && self.mixup_alpha > 0.0) {
            return bad("mixup_alpha", "must be positive");
        }
        self.generator_loss.validate()?;
        self.task_loss.validate()
    }

    /// Task learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.task_epochs * 2 / 3 {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}
