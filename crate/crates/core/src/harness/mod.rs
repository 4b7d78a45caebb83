//! Experiment configuration, orchestration over seeds and variants, reports
//! and checkpoint inspection.

mod config;
mod experiment;
mod report;

pub use config::{DatasetSpec, ExperimentConfig, ModelSpec, ProtocolSpec};
pub use experiment::{ablation_variants, execute, latest_checkpoint, Outcome, Plan, RunOptions, SweepParam, Variant};
pub use report::{
    Aggregate, Failure, Report, ReportRow, RunTiming, Timing, PLOT_FILE, REPORT_FILE, SUMMARY_FILE, TIMING_FILE,
};

use std::fmt::Write as _;

use crate::error::Result;
use crate::tensor::{Checkpoint, RecordData};
use crate::trainer::LEARNER_STATE_RECORD;

/// Human-readable listing of a checkpoint: every record, then the learner
/// state when present.
pub fn describe_checkpoint(ck: &Checkpoint) -> Result<String> {
    let mut out = String::new();
    let mut floats = 0usize;
    let _ = writeln!(out, "{} records", ck.records().len());
    for r in ck.records() {
        let kind = match &r.data {
            RecordData::Float { dtype, .. } => {
                floats += r.dims.iter().product::<usize>();
                format!("{dtype:?}")
            }
            RecordData::Bytes(b) => format!("{} bytes", b.len()),
        };
        let _ = writeln!(out, "  {:<28} {:<10} {:?}", r.name, kind, r.dims);
    }
    let _ = writeln!(out, "{floats} tensor elements");
    if let Ok(bytes) = ck.bytes(LEARNER_STATE_RECORD) {
        let state: serde_json::Value = serde_json::from_slice(bytes)?;
        let train = &state["train"];
        let _ = writeln!(out, "learner state");
        let _ = writeln!(out, "  next task       {}", state["next_task"]);
        let _ = writeln!(out, "  strategy        {}", train["strategy"]);
        let _ = writeln!(out, "  seed            {}", train["seed"]);
        let _ = writeln!(out, "  head rows       {}", state["head_rows"]);
        let gens = state["generators"].as_array().map_or(0, |g| g.len());
        let _ = writeln!(out, "  generators      {gens}");
        let memory = &state["memory"];
        let counts: Vec<String> = memory["classes"]
            .as_array()
            .map(|cs| cs.iter().map(|c| format!("{}:{}", c["class_id"], c["count"])).collect())
            .unwrap_or_default();
        let _ = writeln!(out, "  memory budget   {}", memory["budget"]);
        let _ = writeln!(out, "  memory classes  {}", counts.join(" "));
        let _ = writeln!(out, "  task accuracy   {}", state["metrics"]["task_accuracy"]);
    }
    Ok(out)
}
