use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::Variant;
use crate::error::Result;
use crate::trainer::{average, RunMetrics, Strategy};

/// Mean and spread over the completed runs of one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub completed_runs: usize,
    pub mean_average_accuracy: f64,
    /// Sample standard deviation (`n − 1`); zero for a single run.
    pub std_average_accuracy: f64,
    /// Mean accuracy after each task.
    pub mean_task_accuracy: Vec<f64>,
}

impl Aggregate {
    /// Uses runs with `completed == true` only, in the given order.
    pub fn from_runs(runs: &[RunMetrics]) -> Self {
        let done: Vec<&RunMetrics> = runs.iter().filter(|r| r.completed).collect();
        let avgs: Vec<f64> = done.iter().map(|r| r.average_accuracy).collect();
        let mean = average(&avgs);
        let std = if avgs.len() > 1 {
            (avgs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (avgs.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        let tasks = done.first().map_or(0, |r| r.task_accuracy.len());
        let mean_task_accuracy = (0..tasks)
            .map(|t| average(&done.iter().map(|r| r.task_accuracy[t]).collect::<Vec<_>>()))
            .collect();
        Self {
            completed_runs: done.len(),
            mean_average_accuracy: mean,
            std_average_accuracy: std,
            mean_task_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub strategy: Strategy,
    pub variant: Variant,
    pub runs: Vec<RunMetrics>,
    /// `accuracy_matrix[s][t]`: accuracy of seed `s` after task `t`.
    pub accuracy_matrix: Vec<Vec<f64>>,
    pub aggregate: Aggregate,
}

impl ReportRow {
    pub fn new(variant: &Variant, runs: Vec<RunMetrics>) -> Self {
        Self {
            label: variant.label.clone(),
            strategy: variant.train.strategy,
            variant: variant.clone(),
            accuracy_matrix: runs.iter().map(|r| r.task_accuracy.clone()).collect(),
            aggregate: Aggregate::from_runs(&runs),
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub label: String,
    pub seed: u64,
    pub error: String,
}

/// Deterministic experiment report: identical config and seeds give
/// identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub verb: String,
    pub seeds: Vec<u64>,
    /// Set when any run stopped early; see `failures`.
    pub partial: bool,
    pub failures: Vec<Failure>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub label: String,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_secs: f64,
    pub runs: Vec<RunTiming>,
}

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PLOT_FILE: &str = "plot_data.tsv";
pub const TIMING_FILE: &str = "timing.json";

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Aligned plain-text table, one line per row.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}  config {}  seeds {:?}", self.verb, &self.config_hash[..12], self.seeds);
        if self.partial {
            let _ = writeln!(out, "PARTIAL: {} run(s) failed", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(out, "  {} seed {}: {}", f.label, f.seed, f.error);
            }
        }
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<width$}  {:>17}  {:>5}  accuracy after each task", "row", "average accuracy", "runs");
        for r in &self.rows {
            let a = &r.aggregate;
            let tasks: Vec<String> = a.mean_task_accuracy.iter().map(|x| format!("{:.2}", 100.0 * x)).collect();
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.2} ± {:>6.2}  {:>2}/{:<2}  {}",
                r.label,
                100.0 * a.mean_average_accuracy,
                100.0 * a.std_average_accuracy,
                a.completed_runs,
                r.runs.len(),
                tasks.join(" ")
            );
        }
        out
    }

    /// Long-format table: row, seed (or `mean`), task, accuracy.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("row\tseed\ttask\taccuracy\n");
        for r in &self.rows {
            for run in &r.runs {
                for (t, a) in run.task_accuracy.iter().enumerate() {
                    let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", r.label, run.seed, t + 1, a);
                }
            }
            for (t, a) in r.aggregate.mean_task_accuracy.iter().enumerate() {
                let _ = writeln!(out, "{}\tmean\t{}\t{:.6}", r.label, t + 1, a);
            }
        }
        out
    }

    /// Writes the report, summary and plot table, plus timing when given.
    pub fn write_to(&self, dir: &Path, timing: Option<&Timing>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(REPORT_FILE), self.to_json())?;
        std::fs::write(dir.join(SUMMARY_FILE), self.summary())?;
        std::fs::write(dir.join(PLOT_FILE), self.plot_data())?;
        if let Some(t) = timing {
            std::fs::write(dir.join(TIMING_FILE), serde_json::to_string_pretty(t)? + "\n")?;
        }
        Ok(())
    }
}
