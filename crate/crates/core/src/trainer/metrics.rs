use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::losses::GeneratorLossTerms;

/// Results of one incremental run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub strategy: Strategy,
    /// Top-1 accuracy on all classes seen so far, after each task.
    pub task_accuracy: Vec<f64>,
    /// Row `i`: accuracy on the classes of each task `j ≤ i`, after task `i`.
    pub group_accuracy: Vec<Vec<f64>>,
    pub average_accuracy: f64,
    /// Mean training loss per epoch, per task.
    pub task_loss_curves: Vec<Vec<f64>>,
    /// Mean generator loss per epoch, per class, per task.
    pub generator_loss_curves: Vec<BTreeMap<usize, Vec<f64>>>,
    /// Per-epoch means of the individual generator loss terms.
    pub generator_term_curves: Vec<BTreeMap<usize, Vec<GeneratorLossTerms>>>,
    /// False when the run stopped before the last task.
    pub completed: bool,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    pub fn new(seed: u64, strategy: Strategy) -> Self {
        Self {
            seed,
            strategy,
            task_accuracy: Vec::new(),
            group_accuracy: Vec::new(),
            average_accuracy: 0.0,
            task_loss_curves: Vec::new(),
            generator_loss_curves: Vec::new(),
            generator_term_curves: Vec::new(),
            completed: false,
            wall_clock_secs: 0.0,
        }
    }

    pub fn push_task(&mut self, accuracy: f64, groups: Vec<f64>) {
        self.task_accuracy.push(accuracy);
        self.group_accuracy.push(groups);
        self.average_accuracy = average(&self.task_accuracy);
    }
}

pub fn average(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
